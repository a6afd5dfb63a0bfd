//! Single-task and multi-task model graphs and the combined loss.
//!
//! Five wirings are available:
//!
//! | variant            | front ends                  | boundary head | conditioning |
//! |--------------------|-----------------------------|---------------|--------------|
//! | `SINGLE`           | one                         | no            | no           |
//! | `SHARED_CNN_HEADS` | one, feeding both heads     | yes           | no           |
//! | `COND_A`           | one per task                | yes           | yes          |
//! | `COND_B`           | one, feeding both heads     | yes           | yes          |
//! | `COND_SHARED_SINC` | one per task, sinc layer shared | yes       | yes          |
//!
//! With conditioning, the boundary head runs first and its per-word score is
//! appended to every word vector entering the prominence GRU.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{FirstLayerKind, Frontend, FrontendCache, FrontendSpec};
use crate::fusion::{LexicalCache, LexicalProjection, LexicalSpec, BOUNDARY_FEATURE_DIM, PROMINENCE_FEATURE_DIM};
use crate::layers::Mode;
use crate::params::{Grads, ParamId, ParamStore};
use crate::seqmodel::{DenseCache, DenseHead, EncoderCache, SequenceEncoder, SequenceHeadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ArchitectureVariant {
    Single,
    SharedCnnHeads,
    CondA,
    CondB,
    CondSharedSinc,
}

impl ArchitectureVariant {
    pub const ALL: [ArchitectureVariant; 5] = [
        ArchitectureVariant::Single,
        ArchitectureVariant::SharedCnnHeads,
        ArchitectureVariant::CondA,
        ArchitectureVariant::CondB,
        ArchitectureVariant::CondSharedSinc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchitectureVariant::Single => "SINGLE",
            ArchitectureVariant::SharedCnnHeads => "SHARED_CNN_HEADS",
            ArchitectureVariant::CondA => "COND_A",
            ArchitectureVariant::CondB => "COND_B",
            ArchitectureVariant::CondSharedSinc => "COND_SHARED_SINC",
        }
    }

    pub fn has_boundary(self) -> bool {
        self != ArchitectureVariant::Single
    }

    pub fn is_conditioned(self) -> bool {
        matches!(
            self,
            ArchitectureVariant::CondA | ArchitectureVariant::CondB | ArchitectureVariant::CondSharedSinc
        )
    }
}

impl fmt::Display for ArchitectureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchitectureVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchitectureVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::validation(
                    "architecture",
                    format!("unknown variant `{s}`; expected one of SINGLE, SHARED_CNN_HEADS, COND_A, COND_B, COND_SHARED_SINC"),
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    /// Fixed loss normalizers; when absent they are measured during the
    /// first training epoch and frozen.
    pub scale_prom: Option<f64>,
    pub scale_bound: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            scale_prom: None,
            scale_bound: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossScales {
    pub prom: f64,
    pub bound: f64,
}

impl Default for LossScales {
    fn default() -> Self {
        Self { prom: 1.0, bound: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionSpec {
    pub use_acoustic_features: bool,
    pub prominence_feature_dim: usize,
    pub boundary_feature_dim: usize,
    pub use_lexical: bool,
    pub lexical: LexicalSpec,
}

impl Default for FusionSpec {
    fn default() -> Self {
        Self {
            use_acoustic_features: false,
            prominence_feature_dim: PROMINENCE_FEATURE_DIM,
            boundary_feature_dim: BOUNDARY_FEATURE_DIM,
            use_lexical: false,
            lexical: LexicalSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub architecture: ArchitectureVariant,
    pub frontend: FrontendSpec,
    pub head: SequenceHeadSpec,
    pub fusion: FusionSpec,
    pub loss: LossConfig,
    /// Stop gradients flowing from the prominence loss into the boundary branch.
    pub detach_conditioning: bool,
    pub init_seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            architecture: ArchitectureVariant::Single,
            frontend: FrontendSpec::default(),
            head: SequenceHeadSpec::default(),
            fusion: FusionSpec::default(),
            loss: LossConfig::default(),
            detach_conditioning: false,
            init_seed: 0,
        }
    }
}

impl ModelSpec {
    /// Single-task models always train on the prominence loss alone.
    pub fn effective_alpha(&self) -> f64 {
        if self.architecture.has_boundary() {
            self.loss.alpha
        } else {
            1.0
        }
    }

    /// Every violated constraint, as `field: reason` strings.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |r: Result<()>| {
            if let Err(e) = r {
                out.push(e.to_string());
            }
        };
        push(self.frontend.validate());
        push(self.head.validate());
        if self.fusion.use_lexical {
            push(self.fusion.lexical.validate());
        }
        if !(0.0..=1.0).contains(&self.loss.alpha) {
            push(Err(Error::validation("loss.alpha", format!("must lie in [0, 1], got {}", self.loss.alpha))));
        }
        for (name, v) in [("loss.scale_prom", self.loss.scale_prom), ("loss.scale_bound", self.loss.scale_bound)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    push(Err(Error::validation(name, format!("must be a positive real, got {v}"))));
                }
            }
        }
        if self.fusion.use_acoustic_features && (self.fusion.prominence_feature_dim == 0 || self.fusion.boundary_feature_dim == 0) {
            push(Err(Error::validation("fusion", "feature dimensions must be positive")));
        }
        if self.architecture == ArchitectureVariant::CondSharedSinc && self.frontend.first_layer_kind != FirstLayerKind::Sinc {
            push(Err(Error::validation(
                "architecture",
                "COND_SHARED_SINC shares a sinc first layer; frontend.first_layer_kind must be sinc",
            )));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::validation("model", p.join("; ")))
        }
    }
}

/// Per-word inputs for a batch of utterances, stored utterance-major.
#[derive(Debug, Clone, Default)]
pub struct ModelInput {
    pub segments: Vec<Vec<f64>>,
    pub lengths: Vec<usize>,
    pub prom_features: Option<Array2<f64>>,
    pub bound_features: Option<Array2<f64>>,
    /// Raw lexical embeddings, zeros for unknown tokens.
    pub lexical: Option<Array2<f64>>,
}

impl ModelInput {
    pub fn num_words(&self) -> usize {
        self.segments.len()
    }

    /// `(start, len)` of every utterance in the flat word order.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.lengths
            .iter()
            .map(|&l| {
                let sp = (start, l);
                start += l;
                sp
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub prominence: Vec<f64>,
    pub boundary: Option<Vec<f64>>,
    pub lengths: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskHead {
    pub frontend: usize,
    pub cnn_dim: usize,
    pub acoustic_dim: Option<usize>,
    pub lexical: Option<LexicalProjection>,
    pub conditioned: bool,
    pub encoder: SequenceEncoder,
    pub dense: DenseHead,
}

impl TaskHead {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        frontend: usize,
        cnn_dim: usize,
        acoustic_dim: Option<usize>,
        lexical: Option<&LexicalSpec>,
        conditioned: bool,
        spec: &SequenceHeadSpec,
    ) -> Self {
        let lexical = lexical.map(|l| LexicalProjection::new(store, rng, &format!("{name}.lexical"), l));
        let input_dim = cnn_dim
            + acoustic_dim.unwrap_or(0)
            + lexical.as_ref().map_or(0, |l| l.linear.out_dim)
            + usize::from(conditioned);
        let encoder = SequenceEncoder::new(store, rng, &format!("{name}.encoder"), input_dim, spec);
        let dense = DenseHead::new(store, rng, &format!("{name}.dense"), encoder.output_dim(), spec);
        Self {
            frontend,
            cnn_dim,
            acoustic_dim,
            lexical,
            conditioned,
            encoder,
            dense,
        }
    }

    /// Width of the per-word vector entering the GRU.
    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim
    }

    /// Parameters of the GRU stack, dense layers and lexical projection.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.param_ids();
        ids.extend(self.dense.param_ids());
        if let Some(l) = &self.lexical {
            ids.extend(l.param_ids());
        }
        ids
    }
}

#[derive(Debug, Clone)]
struct HeadCache {
    encoders: Vec<EncoderCache>,
    dense: Vec<DenseCache>,
    lexical: Option<LexicalCache>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    frontends: Vec<FrontendCache>,
    prominence: HeadCache,
    boundary: Option<HeadCache>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub frontends: Vec<Frontend>,
    /// For each front end, the index of the first front end with the same
    /// first-layer parameters (itself when not shared).
    pub first_layer_owner: Vec<usize>,
    pub prominence: TaskHead,
    pub boundary: Option<TaskHead>,
}

/// Builds the parameter graph for `spec`. Construction is deterministic in
/// `spec.init_seed`, so rebuilding from a spec reproduces the same layout.
pub fn build_model(spec: &ModelSpec) -> Result<Model> {
    spec.validate()?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
    let variant = spec.architecture;
    let fe0 = Frontend::new(&mut store, &mut rng, "fe0", &spec.frontend)?;
    let mut frontends = vec![fe0];
    let mut owner = vec![0];
    let bound_frontend = match variant {
        ArchitectureVariant::CondA => {
            frontends.push(Frontend::new(&mut store, &mut rng, "fe1", &spec.frontend)?);
            owner.push(1);
            1
        }
        ArchitectureVariant::CondSharedSinc => {
            let first = *frontends[0].first_conv();
            frontends.push(Frontend::with_first(&mut store, &mut rng, "fe1", &spec.frontend, first));
            owner.push(0);
            1
        }
        _ => 0,
    };
    let cnn_dim = spec.frontend.embedding_dim();
    let fusion = &spec.fusion;
    let boundary = variant.has_boundary().then(|| {
        TaskHead::new(
            &mut store,
            &mut rng,
            "boundary",
            bound_frontend,
            cnn_dim,
            fusion.use_acoustic_features.then_some(fusion.boundary_feature_dim),
            None,
            false,
            &spec.head,
        )
    });
    let prominence = TaskHead::new(
        &mut store,
        &mut rng,
        "prominence",
        0,
        cnn_dim,
        fusion.use_acoustic_features.then_some(fusion.prominence_feature_dim),
        fusion.use_lexical.then_some(&fusion.lexical),
        variant.is_conditioned(),
        &spec.head,
    );
    Ok(Model {
        spec: spec.clone(),
        store,
        frontends,
        first_layer_owner: owner,
        prominence,
        boundary,
    })
}

impl Model {
    pub fn variant(&self) -> ArchitectureVariant {
        self.spec.architecture
    }

    pub fn num_trainable(&self) -> usize {
        self.store.num_trainable()
    }

    /// Replaces the parameters with a store of identical layout.
    pub fn load_store(&mut self, store: ParamStore) -> Result<()> {
        if !self.store.same_layout(&store) {
            return Err(Error::Checkpoint("parameter layout does not match the model spec".into()));
        }
        self.store = store;
        Ok(())
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        let n = input.num_words();
        if input.lengths.iter().sum::<usize>() != n {
            return Err(Error::Shape(format!("utterance lengths do not sum to {n} words")));
        }
        if input.lengths.iter().any(|&l| l == 0) {
            return Err(Error::Shape("empty utterance in batch".into()));
        }
        let need = |name: &str, m: &Option<Array2<f64>>, dim: Option<usize>| -> Result<()> {
            match (m, dim) {
                (_, None) => Ok(()),
                (None, Some(_)) => Err(Error::Shape(format!("model needs {name} inputs"))),
                (Some(m), Some(d)) if m.dim() != (n, d) => Err(Error::Shape(format!(
                    "{name} inputs are {:?}, expected ({n}, {d})",
                    m.dim()
                ))),
                _ => Ok(()),
            }
        };
        need("prominence feature", &input.prom_features, self.prominence.acoustic_dim)?;
        if let Some(b) = &self.boundary {
            need("boundary feature", &input.bound_features, b.acoustic_dim)?;
        }
        need(
            "lexical",
            &input.lexical,
            self.prominence.lexical.as_ref().map(|l| l.linear.in_dim),
        )?;
        Ok(())
    }

    fn embed(&self, input: &ModelInput, mode: Mode) -> Result<(Vec<Array2<f64>>, Vec<FrontendCache>)> {
        let segs: Vec<&[f64]> = input.segments.iter().map(Vec::as_slice).collect();
        let mut first_out: Vec<Option<Vec<Array2<f64>>>> = vec![None; self.frontends.len()];
        let mut embs = Vec::with_capacity(self.frontends.len());
        let mut caches = Vec::with_capacity(self.frontends.len());
        for (i, fe) in self.frontends.iter().enumerate() {
            let owner = self.first_layer_owner[i];
            if first_out[owner].is_none() {
                first_out[owner] = Some(fe.first_conv_forward(&self.store, &segs)?);
            }
            let still_needed = self.first_layer_owner[i + 1..].contains(&owner);
            let conv0 = if still_needed {
                first_out[owner].clone().expect("computed above")
            } else {
                first_out[owner].take().expect("computed above")
            };
            let (e, c) = fe.forward_from_first(&self.store, conv0, mode)?;
            embs.push(e);
            caches.push(c);
        }
        Ok((embs, caches))
    }

    fn head_forward(
        &self,
        head: &TaskHead,
        emb: &Array2<f64>,
        acoustic: Option<&Array2<f64>>,
        lexical: Option<&Array2<f64>>,
        cond: Option<&[f64]>,
        spans: &[(usize, usize)],
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, HeadCache)> {
        let n = emb.nrows();
        let mut x = Array2::<f64>::zeros((n, head.input_dim()));
        let mut col = 0;
        x.slice_mut(s![.., ..head.cnn_dim]).assign(emb);
        col += head.cnn_dim;
        if let Some(d) = head.acoustic_dim {
            x.slice_mut(s![.., col..col + d]).assign(acoustic.expect("checked input"));
            col += d;
        }
        let mut lex_cache = None;
        if let Some(proj) = &head.lexical {
            let (p, c) = proj.forward(&self.store, lexical.expect("checked input").view(), mode, rng);
            x.slice_mut(s![.., col..col + p.ncols()]).assign(&p);
            col += p.ncols();
            lex_cache = Some(c);
        }
        if head.conditioned {
            let c = cond.expect("conditioned head needs boundary scores");
            x.slice_mut(s![.., col]).assign(&ndarray::ArrayView1::from(c));
        }
        let mut scores = Vec::with_capacity(n);
        let mut encoders = Vec::with_capacity(spans.len());
        let mut dense = Vec::with_capacity(spans.len());
        for &(start, len) in spans {
            let (h, ec) = head.encoder.forward(&self.store, x.slice(s![start..start + len, ..]), mode, rng)?;
            let (sc, dc) = head.dense.forward(&self.store, h.view(), mode, rng)?;
            scores.extend(sc.iter());
            encoders.push(ec);
            dense.push(dc);
        }
        Ok((
            scores,
            HeadCache {
                encoders,
                dense,
                lexical: lex_cache,
            },
        ))
    }

    /// Per-word scores for every task the variant predicts.
    pub fn forward(&self, input: &ModelInput, mode: Mode, rng: &mut ChaCha8Rng) -> Result<(Predictions, ForwardCache)> {
        self.check_input(input)?;
        let spans = input.spans();
        let (embs, fe_caches) = self.embed(input, mode)?;
        let mut bound_out = None;
        if let Some(b) = &self.boundary {
            let (scores, cache) = self.head_forward(
                b,
                &embs[b.frontend],
                input.bound_features.as_ref(),
                None,
                None,
                &spans,
                mode,
                rng,
            )?;
            bound_out = Some((scores, cache));
        }
        let p = &self.prominence;
        let (prom_scores, prom_cache) = self.head_forward(
            p,
            &embs[p.frontend],
            input.prom_features.as_ref(),
            input.lexical.as_ref(),
            bound_out.as_ref().map(|(s, _)| s.as_slice()),
            &spans,
            mode,
            rng,
        )?;
        let (boundary, bcache) = match bound_out {
            Some((s, c)) => (Some(s), Some(c)),
            None => (None, None),
        };
        Ok((
            Predictions {
                prominence: prom_scores,
                boundary,
                lengths: input.lengths.clone(),
            },
            ForwardCache {
                frontends: fe_caches,
                prominence: prom_cache,
                boundary: bcache,
            },
        ))
    }

    /// Inference-mode scores.
    pub fn predict(&self, input: &ModelInput) -> Result<Predictions> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(input, Mode::Eval, &mut rng)?.0)
    }

    /// Returns the gradient w.r.t. the head's input vectors.
    fn head_backward(&self, head: &TaskHead, cache: &HeadCache, dscores: &[f64], spans: &[(usize, usize)], grads: &mut Grads) -> Array2<f64> {
        let n: usize = spans.iter().map(|s| s.1).sum();
        let mut dx = Array2::<f64>::zeros((n, head.input_dim()));
        for (u, &(start, len)) in spans.iter().enumerate() {
            let d = Array1::from(dscores[start..start + len].to_vec());
            let dh = head.dense.backward(&self.store, grads, &cache.dense[u], &d);
            let dxu = head.encoder.backward(&self.store, grads, &cache.encoders[u], dh.view());
            dx.slice_mut(s![start..start + len, ..]).assign(&dxu);
        }
        if let (Some(proj), Some(lc)) = (&head.lexical, &cache.lexical) {
            let off = head.cnn_dim + head.acoustic_dim.unwrap_or(0);
            let w = proj.linear.out_dim;
            proj.backward(&self.store, grads, lc, dx.slice(s![.., off..off + w]));
        }
        dx
    }

    /// Back-propagates score gradients into `grads`.
    pub fn backward(&self, input: &ModelInput, cache: &ForwardCache, dprom: &[f64], dbound: Option<&[f64]>, grads: &mut Grads) {
        let spans = input.spans();
        let n = input.num_words();
        let mut demb: Vec<Array2<f64>> = self
            .frontends
            .iter()
            .map(|f| Array2::zeros((n, f.embedding_dim())))
            .collect();
        let p = &self.prominence;
        let dxp = self.head_backward(p, &cache.prominence, dprom, &spans, grads);
        demb[p.frontend] += &dxp.slice(s![.., ..p.cnn_dim]);
        if let (Some(b), Some(bc)) = (&self.boundary, &cache.boundary) {
            let mut db = dbound.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
            if p.conditioned && !self.spec.detach_conditioning {
                let col = p.input_dim() - 1;
                for (d, c) in db.iter_mut().zip(dxp.column(col)) {
                    *d += c;
                }
            }
            let dxb = self.head_backward(b, bc, &db, &spans, grads);
            demb[b.frontend] += &dxb.slice(s![.., ..b.cnn_dim]);
        }
        let segs: Vec<&[f64]> = input.segments.iter().map(Vec::as_slice).collect();
        let mut dfirst: Vec<Option<Vec<Array2<f64>>>> = vec![None; self.frontends.len()];
        for (i, fe) in self.frontends.iter().enumerate() {
            let d = fe.backward_to_first(&self.store, grads, &cache.frontends[i], demb[i].view());
            let owner = self.first_layer_owner[i];
            match &mut dfirst[owner] {
                Some(acc) => {
                    for (a, x) in acc.iter_mut().zip(d) {
                        *a += &x;
                    }
                }
                slot @ None => *slot = Some(d),
            }
        }
        for (i, d) in dfirst.into_iter().enumerate() {
            if let Some(d) = d {
                self.frontends[i].first_conv_backward(&self.store, grads, &segs, &d);
            }
        }
    }

    /// Folds batch-norm statistics of a training forward pass into the running buffers.
    /// Replaces the running normalization statistics with the average batch
    /// statistics over `inputs`, computed with the current weights.
    pub fn calibrate_batchnorm(&mut self, inputs: &[ModelInput]) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut sums: Vec<Vec<(Array1<f64>, Array1<f64>)>> = Vec::new();
        for input in inputs {
            let (_, cache) = self.forward(input, Mode::Train, &mut rng)?;
            for (i, c) in cache.frontends.iter().enumerate() {
                let stats = c.batch_stats();
                if sums.len() <= i {
                    sums.push(stats);
                } else {
                    for ((m, v), (bm, bv)) in sums[i].iter_mut().zip(stats) {
                        *m += &bm;
                        *v += &bv;
                    }
                }
            }
        }
        if inputs.is_empty() {
            return Ok(());
        }
        let n = inputs.len() as f64;
        for (fe, stats) in self.frontends.iter().zip(&mut sums) {
            for (m, v) in stats.iter_mut() {
                *m /= n;
                *v /= n;
            }
            fe.set_running(&mut self.store, stats);
        }
        Ok(())
    }

    pub fn update_running(&mut self, cache: &ForwardCache) {
        for (fe, c) in self.frontends.iter().zip(&cache.frontends) {
            fe.update_running(&mut self.store, c);
        }
    }
}

/// Value of the combined objective and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub prom_mse: f64,
    pub bound_mse: Option<f64>,
}

fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// `alpha * mse_p / scale_p + (1 - alpha) * mse_b / scale_b`; without a
/// boundary stream, `mse_p / scale_p`.
pub fn total_loss(
    prom_pred: &[f64],
    prom_true: &[f64],
    bound: Option<(&[f64], &[f64])>,
    alpha: f64,
    scales: LossScales,
) -> Result<LossValue> {
    let lp = mse(prom_pred, prom_true)?;
    match bound {
        None => Ok(LossValue {
            total: lp / scales.prom,
            prom_mse: lp,
            bound_mse: None,
        }),
        Some((bp, bt)) => {
            let lb = mse(bp, bt)?;
            Ok(LossValue {
                total: alpha * lp / scales.prom + (1.0 - alpha) * lb / scales.bound,
                prom_mse: lp,
                bound_mse: Some(lb),
            })
        }
    }
}

/// Gradients of [`total_loss`] with respect to the predictions.
pub fn total_loss_grad(
    prom_pred: &[f64],
    prom_true: &[f64],
    bound: Option<(&[f64], &[f64])>,
    alpha: f64,
    scales: LossScales,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let grad = |p: &[f64], t: &[f64], w: f64| -> Vec<f64> {
        let n = p.len().max(1) as f64;
        p.iter().zip(t).map(|(p, t)| w * 2.0 * (p - t) / n).collect()
    };
    match bound {
        None => (grad(prom_pred, prom_true, 1.0 / scales.prom), None),
        Some((bp, bt)) => (
            grad(prom_pred, prom_true, alpha / scales.prom),
            Some(grad(bp, bt, (1.0 - alpha) / scales.bound)),
        ),
    }
}
