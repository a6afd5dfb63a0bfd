//! Bidirectional GRU stack with a two-layer dense scoring head.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{self, dropout_mask, sigmoid, Linear, Mode};
use crate::params::{Grads, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceHeadSpec {
    pub gru_layers: usize,
    pub gru_hidden: usize,
    pub bidirectional: bool,
    pub inter_layer_dropout: f64,
    pub fc1_dim: usize,
    pub fc1_dropout: f64,
}

impl Default for SequenceHeadSpec {
    fn default() -> Self {
        Self {
            gru_layers: 3,
            gru_hidden: 256,
            bidirectional: true,
            inter_layer_dropout: 0.5,
            fc1_dim: 128,
            fc1_dropout: 0.5,
        }
    }
}

impl SequenceHeadSpec {
    pub fn output_dim(&self) -> usize {
        self.gru_hidden * if self.bidirectional { 2 } else { 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gru_layers == 0 || self.gru_hidden == 0 || self.fc1_dim == 0 {
            return Err(Error::validation("head", "gru_layers, gru_hidden and fc1_dim must be positive"));
        }
        for (name, p) in [("head.inter_layer_dropout", self.inter_layer_dropout), ("head.fc1_dropout", self.fc1_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::validation(name, format!("must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }
}

/// One direction of one GRU layer, gates ordered (reset, update, new).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GruCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
struct GruStepCache {
    /// Rows per time step: r, z, n, W_hn h + b_hn, h_prev.
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    gh_n: Array2<f64>,
    h_prev: Array2<f64>,
}

impl GruCell {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input_dim: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.add(
            format!("{name}.w_ih"),
            &[3 * hidden, input_dim],
            layers::uniform_vec(rng, 3 * hidden * input_dim, bound),
        );
        let mut whh = Vec::with_capacity(3 * hidden * hidden);
        for _ in 0..3 {
            whh.extend(layers::orthogonal(rng, hidden).iter().copied());
        }
        let w_hh = store.add(format!("{name}.w_hh"), &[3 * hidden, hidden], whh);
        let b_ih = store.add(format!("{name}.b_ih"), &[3 * hidden], layers::uniform_vec(rng, 3 * hidden, bound));
        let b_hh = store.add(format!("{name}.b_hh"), &[3 * hidden], layers::uniform_vec(rng, 3 * hidden, bound));
        Self {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            input_dim,
            hidden,
        }
    }

    /// Runs over the rows of `x` in order; returns hidden states `(T, H)`.
    fn forward(&self, store: &ParamStore, x: ArrayView2<'_, f64>) -> (Array2<f64>, GruStepCache) {
        let h = self.hidden;
        let t_len = x.nrows();
        let mut gi = x.dot(&store.matrix(self.w_ih).t());
        gi += &store.vector(self.b_ih);
        let w_hh = store.matrix(self.w_hh);
        let b_hh = store.vector(self.b_hh);
        let mut cache = GruStepCache {
            r: Array2::zeros((t_len, h)),
            z: Array2::zeros((t_len, h)),
            n: Array2::zeros((t_len, h)),
            gh_n: Array2::zeros((t_len, h)),
            h_prev: Array2::zeros((t_len, h)),
        };
        let mut out = Array2::<f64>::zeros((t_len, h));
        let mut hprev = Array1::<f64>::zeros(h);
        for t in 0..t_len {
            let gh = w_hh.dot(&hprev) + &b_hh;
            let gi_t = gi.row(t);
            for j in 0..h {
                let r = sigmoid(gi_t[j] + gh[j]);
                let z = sigmoid(gi_t[h + j] + gh[h + j]);
                let n = (gi_t[2 * h + j] + r * gh[2 * h + j]).tanh();
                cache.r[[t, j]] = r;
                cache.z[[t, j]] = z;
                cache.n[[t, j]] = n;
                cache.gh_n[[t, j]] = gh[2 * h + j];
                cache.h_prev[[t, j]] = hprev[j];
                out[[t, j]] = (1.0 - z) * n + z * hprev[j];
            }
            hprev = out.row(t).to_owned();
        }
        (out, cache)
    }

    fn backward(&self, store: &ParamStore, grads: &mut Grads, x: ArrayView2<'_, f64>, cache: &GruStepCache, dout: ArrayView2<'_, f64>) -> Array2<f64> {
        let h = self.hidden;
        let t_len = x.nrows();
        let w_hh = store.matrix(self.w_hh);
        let mut dgi = Array2::<f64>::zeros((t_len, 3 * h));
        let mut dgh_all = Array2::<f64>::zeros((t_len, 3 * h));
        let mut dh_next = Array1::<f64>::zeros(h);
        for t in (0..t_len).rev() {
            let mut dgh = Array1::<f64>::zeros(3 * h);
            let mut dh_prev = Array1::<f64>::zeros(h);
            for j in 0..h {
                let dh = dout[[t, j]] + dh_next[j];
                let (r, z, n) = (cache.r[[t, j]], cache.z[[t, j]], cache.n[[t, j]]);
                let hp = cache.h_prev[[t, j]];
                let dn = dh * (1.0 - z);
                let dz = dh * (hp - n);
                dh_prev[j] = dh * z;
                let dn_pre = dn * (1.0 - n * n);
                let dr = dn_pre * cache.gh_n[[t, j]];
                let dr_pre = dr * r * (1.0 - r);
                let dz_pre = dz * z * (1.0 - z);
                dgi[[t, j]] = dr_pre;
                dgi[[t, h + j]] = dz_pre;
                dgi[[t, 2 * h + j]] = dn_pre;
                dgh[j] = dr_pre;
                dgh[h + j] = dz_pre;
                dgh[2 * h + j] = dn_pre * r;
            }
            dh_prev += &dgh.dot(&w_hh);
            dgh_all.row_mut(t).assign(&dgh);
            dh_next = dh_prev;
        }
        {
            let mut g = grads.matrix_mut(self.w_hh);
            g += &dgh_all.t().dot(&cache.h_prev);
        }
        {
            let mut g = grads.vector_mut(self.b_hh);
            g += &dgh_all.sum_axis(Axis(0));
        }
        {
            let mut g = grads.matrix_mut(self.w_ih);
            g += &dgi.t().dot(&x);
        }
        {
            let mut g = grads.vector_mut(self.b_ih);
            g += &dgi.sum_axis(Axis(0));
        }
        dgi.dot(&store.matrix(self.w_ih))
    }
}

fn reversed(x: ArrayView2<'_, f64>) -> Array2<f64> {
    x.slice(s![..;-1, ..]).to_owned()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GruLayer {
    pub fwd: GruCell,
    pub bwd: Option<GruCell>,
}

/// Stacked (bi)GRU encoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceEncoder {
    pub layers: Vec<GruLayer>,
    pub input_dim: usize,
    pub dropout: f64,
    pub bidirectional: bool,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    inputs: Vec<Array2<f64>>,
    fwd: Vec<GruStepCache>,
    bwd: Vec<Option<GruStepCache>>,
    masks: Vec<Option<Array2<f64>>>,
}

impl SequenceEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input_dim: usize, spec: &SequenceHeadSpec) -> Self {
        let mut layers = Vec::with_capacity(spec.gru_layers);
        let mut d = input_dim;
        for l in 0..spec.gru_layers {
            let fwd = GruCell::new(store, rng, &format!("{name}.gru{l}.fwd"), d, spec.gru_hidden);
            let bwd = spec
                .bidirectional
                .then(|| GruCell::new(store, rng, &format!("{name}.gru{l}.bwd"), d, spec.gru_hidden));
            layers.push(GruLayer { fwd, bwd });
            d = spec.output_dim();
        }
        Self {
            layers,
            input_dim,
            dropout: spec.inter_layer_dropout,
            bidirectional: spec.bidirectional,
        }
    }

    pub fn output_dim(&self) -> usize {
        let h = self.layers[0].fwd.hidden;
        if self.bidirectional {
            2 * h
        } else {
            h
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(l.fwd).chain(l.bwd))
            .flat_map(|c| [c.w_ih, c.w_hh, c.b_ih, c.b_hh])
            .collect()
    }

    /// Encodes one utterance `(words, input_dim)` into `(words, output_dim)`.
    pub fn forward(&self, store: &ParamStore, x: ArrayView2<'_, f64>, mode: Mode, rng: &mut ChaCha8Rng) -> Result<(Array2<f64>, EncoderCache)> {
        if x.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "encoder expects {}-dim word vectors, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        let mut cache = EncoderCache {
            inputs: Vec::new(),
            fwd: Vec::new(),
            bwd: Vec::new(),
            masks: Vec::new(),
        };
        let mut cur = x.to_owned();
        let n_layers = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let (hf, cf) = layer.fwd.forward(store, cur.view());
            let mut out = if let Some(b) = &layer.bwd {
                let (hb_rev, cb) = b.forward(store, reversed(cur.view()).view());
                let hb = reversed(hb_rev.view());
                cache.bwd.push(Some(cb));
                ndarray::concatenate![Axis(1), hf, hb]
            } else {
                cache.bwd.push(None);
                hf
            };
            cache.fwd.push(cf);
            let mask = if l + 1 < n_layers {
                dropout_mask(rng, out.dim(), self.dropout, mode)
            } else {
                None
            };
            if let Some(m) = &mask {
                out *= m;
            }
            cache.masks.push(mask);
            cache.inputs.push(cur);
            cur = out;
        }
        Ok((cur, cache))
    }

    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, cache: &EncoderCache, dout: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut d = dout.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if let Some(m) = &cache.masks[l] {
                d *= m;
            }
            let x = cache.inputs[l].view();
            let h = layer.fwd.hidden;
            let mut dx = layer.fwd.backward(store, grads, x, &cache.fwd[l], d.slice(s![.., ..h]));
            if let (Some(b), Some(cb)) = (&layer.bwd, &cache.bwd[l]) {
                let d_rev = reversed(d.slice(s![.., h..]));
                let dx_rev = b.backward(store, grads, reversed(x).view(), cb, d_rev.view());
                dx += &reversed(dx_rev.view());
            }
            d = dx;
        }
        d
    }
}

/// Padded-batch convenience: row `t` of `batch[u]` is valid while `t < lengths[u]`.
/// Padded rows are dropped before encoding and come back as zeros.
pub fn encode_sequence(
    store: &ParamStore,
    encoder: &SequenceEncoder,
    batch: &[Array2<f64>],
    lengths: &[usize],
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Array2<f64>>> {
    if batch.len() != lengths.len() {
        return Err(Error::Shape("one length per sequence is required".into()));
    }
    batch
        .iter()
        .zip(lengths)
        .map(|(x, &len)| {
            if len > x.nrows() {
                return Err(Error::Shape(format!("length {len} exceeds padded size {}", x.nrows())));
            }
            let (h, _) = encoder.forward(store, x.slice(s![..len, ..]), mode, rng)?;
            let mut out = Array2::<f64>::zeros((x.nrows(), encoder.output_dim()));
            out.slice_mut(s![..len, ..]).assign(&h);
            Ok(out)
        })
        .collect()
}

/// FC -> ReLU -> dropout -> FC(1) -> sigmoid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseHead {
    pub fc1: Linear,
    pub fc2: Linear,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Array2<f64>,
    pre1: Array2<f64>,
    act1: Array2<f64>,
    mask: Option<Array2<f64>>,
    scores: Array1<f64>,
}

impl DenseHead {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, input_dim: usize, spec: &SequenceHeadSpec) -> Self {
        Self {
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), input_dim, spec.fc1_dim),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), spec.fc1_dim, 1),
            dropout: spec.fc1_dropout,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias]
    }

    /// Scores for every row of `hidden`, each in (0, 1).
    pub fn forward(&self, store: &ParamStore, hidden: ArrayView2<'_, f64>, mode: Mode, rng: &mut ChaCha8Rng) -> Result<(Array1<f64>, DenseCache)> {
        if hidden.ncols() != self.fc1.in_dim {
            return Err(Error::Shape(format!(
                "dense head expects {} inputs, got {}",
                self.fc1.in_dim,
                hidden.ncols()
            )));
        }
        let pre1 = self.fc1.forward(store, hidden);
        let mut act1 = pre1.mapv(|v| v.max(0.0));
        let mask = dropout_mask(rng, act1.dim(), self.dropout, mode);
        if let Some(m) = &mask {
            act1 *= m;
        }
        let logits = self.fc2.forward(store, act1.view());
        let scores = logits.column(0).mapv(sigmoid);
        Ok((
            scores.clone(),
            DenseCache {
                input: hidden.to_owned(),
                pre1,
                act1,
                mask,
                scores,
            },
        ))
    }

    /// `dscores` is the loss gradient w.r.t. the sigmoid outputs.
    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, cache: &DenseCache, dscores: &Array1<f64>) -> Array2<f64> {
        let dlogit = (dscores * &cache.scores.mapv(|p| p * (1.0 - p))).insert_axis(Axis(1));
        let mut dact = self.fc2.backward(store, grads, cache.act1.view(), dlogit.view());
        if let Some(m) = &cache.mask {
            dact *= m;
        }
        dact.zip_mut_with(&cache.pre1, |d, &p| {
            if p <= 0.0 {
                *d = 0.0;
            }
        });
        self.fc1.backward(store, grads, cache.input.view(), dact.view())
    }
}

/// Score of a single hidden vector in inference mode.
pub fn dense_head(store: &ParamStore, head: &DenseHead, hidden: &[f64]) -> Result<f64> {
    let x = ArrayView2::from_shape((1, hidden.len()), hidden).expect("contiguous");
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let (s, _) = head.forward(store, x, Mode::Eval, &mut rng)?;
    Ok(s[0])
}
