//! Differentiable building blocks with explicit backward passes.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::params::{Grads, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    if bound == 0.0 {
        return vec![0.0; n];
    }
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Row-orthonormal `n × n` matrix from Gram-Schmidt on a Gaussian draw.
pub(crate) fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    loop {
        let mut m = Array2::<f64>::zeros((n, n));
        m.mapv_inplace(|_| StandardNormal.sample(rng));
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let proj = m.row(i).dot(&m.row(j));
                let rj = m.row(j).to_owned();
                m.row_mut(i).scaled_add(-proj, &rj);
            }
            let norm = m.row(i).dot(&m.row(i)).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            m.row_mut(i).mapv_inplace(|v| v / norm);
        }
        if ok {
            return m;
        }
    }
}

/// Fully connected layer `y = W x + b` with `W` of shape `(out, in)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            &[out_dim, in_dim],
            uniform_vec(rng, out_dim * in_dim, bound),
        );
        let bias = store.add(format!("{name}.bias"), &[out_dim], uniform_vec(rng, out_dim, bound));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// Rows of `x` are samples.
    pub fn forward(&self, store: &ParamStore, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&store.matrix(self.weight).t());
        y += &store.vector(self.bias);
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>) -> Array2<f64> {
        {
            let mut dw = grads.matrix_mut(self.weight);
            dw += &dy.t().dot(&x);
        }
        {
            let mut db = grads.vector_mut(self.bias);
            db += &dy.sum_axis(Axis(0));
        }
        dy.dot(&store.matrix(self.weight))
    }
}

pub fn conv_out_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    if len < kernel || kernel == 0 || stride == 0 {
        None
    } else {
        Some((len - kernel) / stride + 1)
    }
}

pub fn pool_out_len(len: usize, pool: usize) -> usize {
    if len < pool || pool == 0 {
        0
    } else {
        (len - pool) / pool + 1
    }
}

/// Unfold `x` of shape `(channels, len)` into `(out_len, channels * kernel)`.
pub(crate) fn im2col(x: ArrayView2<'_, f64>, kernel: usize, stride: usize, out_len: usize) -> Array2<f64> {
    let channels = x.nrows();
    let mut cols = Array2::<f64>::zeros((out_len, channels * kernel));
    for c in 0..channels {
        let row = x.row(c);
        let src = row.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| row.to_vec());
        for t in 0..out_len {
            let start = t * stride;
            let mut dst = cols.row_mut(t);
            let dst = dst.as_slice_mut().expect("standard layout");
            dst[c * kernel..(c + 1) * kernel].copy_from_slice(&src[start..start + kernel]);
        }
    }
    cols
}

/// Scatter-add inverse of [`im2col`].
pub(crate) fn col2im(dcols: ArrayView2<'_, f64>, channels: usize, len: usize, kernel: usize, stride: usize) -> Array2<f64> {
    let mut dx = Array2::<f64>::zeros((channels, len));
    for t in 0..dcols.nrows() {
        let start = t * stride;
        let row = dcols.row(t);
        for c in 0..channels {
            let mut dst = dx.row_mut(c);
            for k in 0..kernel {
                dst[start + k] += row[c * kernel + k];
            }
        }
    }
    dx
}

/// Valid 1-D convolution of `(in_ch, len)` with a `(out_ch, in_ch * kernel)` filter matrix.
pub(crate) fn conv1d(x: ArrayView2<'_, f64>, weight: ArrayView2<'_, f64>, kernel: usize, stride: usize) -> Array2<f64> {
    let out_len = conv_out_len(x.ncols(), kernel, stride).expect("caller checked length");
    let cols = im2col(x, kernel, stride, out_len);
    weight.dot(&cols.t())
}

/// Returns (dweight, dx); `dx` only when `need_dx`.
pub(crate) fn conv1d_backward(
    x: ArrayView2<'_, f64>,
    weight: ArrayView2<'_, f64>,
    dy: ArrayView2<'_, f64>,
    kernel: usize,
    stride: usize,
    need_dx: bool,
) -> (Array2<f64>, Option<Array2<f64>>) {
    let cols = im2col(x, kernel, stride, dy.ncols());
    let dw = dy.dot(&cols);
    let dx = need_dx.then(|| {
        let dcols = dy.t().dot(&weight);
        col2im(dcols.view(), x.nrows(), x.ncols(), kernel, stride)
    });
    (dw, dx)
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over the batch × time extent.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub xhat: Vec<Array2<f64>>,
    pub inv_std: Array1<f64>,
    pub batch_mean: Array1<f64>,
    pub batch_var_unbiased: Array1<f64>,
    pub mode: Mode,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), &[channels], vec![1.0; channels]),
            beta: store.add(format!("{name}.beta"), &[channels], vec![0.0; channels]),
            running_mean: store.add_buffer(format!("{name}.running_mean"), &[channels], vec![0.0; channels]),
            running_var: store.add_buffer(format!("{name}.running_var"), &[channels], vec![1.0; channels]),
            channels,
        }
    }

    /// Normalizes every `(channels, len)` map in `xs` in place.
    pub fn forward(&self, store: &ParamStore, xs: &mut [Array2<f64>], mode: Mode) -> BatchNormCache {
        let gamma = store.vector(self.gamma).to_owned();
        let beta = store.vector(self.beta).to_owned();
        let (mean, inv_std, var_unbiased) = match mode {
            Mode::Eval => {
                let mean = store.vector(self.running_mean).to_owned();
                let var = store.vector(self.running_var).to_owned();
                (mean, var.mapv(|v| 1.0 / (v + BN_EPS).sqrt()), var)
            }
            Mode::Train => {
                let count: usize = xs.iter().map(|x| x.ncols()).sum();
                let n = count as f64;
                let mut mean = Array1::<f64>::zeros(self.channels);
                for x in xs.iter() {
                    mean += &x.sum_axis(Axis(1));
                }
                mean /= n;
                let mut var = Array1::<f64>::zeros(self.channels);
                for x in xs.iter() {
                    for (c, row) in x.rows().into_iter().enumerate() {
                        var[c] += row.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
                    }
                }
                let var_unbiased = if count > 1 { &var / (n - 1.0) } else { var.clone() };
                var /= n;
                (mean, var.mapv(|v| 1.0 / (v + BN_EPS).sqrt()), var_unbiased)
            }
        };
        let mut xhat = Vec::with_capacity(xs.len());
        for x in xs.iter_mut() {
            for (c, mut row) in x.rows_mut().into_iter().enumerate() {
                let (m, s) = (mean[c], inv_std[c]);
                row.mapv_inplace(|v| (v - m) * s);
            }
            xhat.push(x.clone());
            for (c, mut row) in x.rows_mut().into_iter().enumerate() {
                let (g, b) = (gamma[c], beta[c]);
                row.mapv_inplace(|v| v * g + b);
            }
        }
        BatchNormCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var_unbiased: var_unbiased,
            mode,
        }
    }

    /// `dys` is overwritten with the input gradient.
    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, cache: &BatchNormCache, dys: &mut [Array2<f64>]) {
        let gamma = store.vector(self.gamma).to_owned();
        let n: f64 = dys.iter().map(|d| d.ncols()).sum::<usize>() as f64;
        let mut sum_dy = Array1::<f64>::zeros(self.channels);
        let mut sum_dy_xhat = Array1::<f64>::zeros(self.channels);
        for (dy, xhat) in dys.iter().zip(&cache.xhat) {
            sum_dy += &dy.sum_axis(Axis(1));
            sum_dy_xhat += &(&*dy * xhat).sum_axis(Axis(1));
        }
        {
            let mut dg = grads.vector_mut(self.gamma);
            dg += &sum_dy_xhat;
        }
        {
            let mut db = grads.vector_mut(self.beta);
            db += &sum_dy;
        }
        for (dy, xhat) in dys.iter_mut().zip(&cache.xhat) {
            for c in 0..self.channels {
                let mut row = dy.row_mut(c);
                match cache.mode {
                    Mode::Eval => {
                        let k = gamma[c] * cache.inv_std[c];
                        row.mapv_inplace(|d| d * k);
                    }
                    Mode::Train => {
                        let k = gamma[c] * cache.inv_std[c] / n;
                        let a = sum_dy[c];
                        let b = sum_dy_xhat[c];
                        for (d, &xh) in row.iter_mut().zip(xhat.row(c).iter()) {
                            *d = k * (n * *d - a - xh * b);
                        }
                    }
                }
            }
        }
    }

    pub fn update_running(&self, store: &mut ParamStore, cache: &BatchNormCache) {
        if cache.mode != Mode::Train {
            return;
        }
        for (c, rm) in store.data_mut(self.running_mean).iter_mut().enumerate() {
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * cache.batch_mean[c];
        }
        for (c, rv) in store.data_mut(self.running_var).iter_mut().enumerate() {
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * cache.batch_var_unbiased[c];
        }
    }
}

/// Non-overlapping max pooling followed by ReLU (the two commute).
/// Returns the activated map and the argmax index of every pooled cell.
pub(crate) fn relu_maxpool(x: &Array2<f64>, pool: usize) -> (Array2<f64>, Array2<u32>) {
    let out_len = pool_out_len(x.ncols(), pool);
    let mut out = Array2::<f64>::zeros((x.nrows(), out_len));
    let mut arg = Array2::<u32>::zeros((x.nrows(), out_len));
    for (c, row) in x.rows().into_iter().enumerate() {
        for t in 0..out_len {
            let start = t * pool;
            let mut best = start;
            for i in start + 1..start + pool {
                if row[i] > row[best] {
                    best = i;
                }
            }
            out[[c, t]] = row[best].max(0.0);
            arg[[c, t]] = best as u32;
        }
    }
    (out, arg)
}

pub(crate) fn relu_maxpool_backward(dout: &Array2<f64>, out: &Array2<f64>, arg: &Array2<u32>, in_len: usize) -> Array2<f64> {
    let mut dx = Array2::<f64>::zeros((dout.nrows(), in_len));
    for ((idx, &d), (&o, &a)) in dout.indexed_iter().zip(out.iter().zip(arg.iter())) {
        if o > 0.0 {
            dx[[idx.0, a as usize]] += d;
        }
    }
    dx
}

/// Inverted dropout mask; `None` when inactive.
pub(crate) fn dropout_mask(rng: &mut ChaCha8Rng, shape: (usize, usize), p: f64, mode: Mode) -> Option<Array2<f64>> {
    if !mode.is_train() || p <= 0.0 {
        return None;
    }
    let keep = 1.0 - p;
    let mut m = Array2::<f64>::zeros(shape);
    m.mapv_inplace(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
    Some(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn pool_length_rule() {
        assert_eq!(pool_out_len(9, 3), 3);
        assert_eq!(pool_out_len(10, 3), 3);
        assert_eq!(pool_out_len(2, 3), 0);
    }

    #[test]
    fn orthogonal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = orthogonal(&mut rng, 6);
        let eye = q.dot(&q.t());
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((eye[[i, j]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Array2::from_shape_vec((2, 12), uniform_vec(&mut rng, 24, 1.0)).unwrap();
        let w = Array2::from_shape_vec((3, 2 * 4), uniform_vec(&mut rng, 24, 1.0)).unwrap();
        let probe = Array2::from_shape_vec((3, 5), uniform_vec(&mut rng, 15, 1.0)).unwrap();
        let loss = |x: &Array2<f64>, w: &Array2<f64>| (conv1d(x.view(), w.view(), 4, 2) * &probe).sum();
        let (dw, dx) = conv1d_backward(x.view(), w.view(), probe.view(), 4, 2, true);
        let dx = dx.unwrap();
        let h = 1e-6;
        for idx in [(0, 0), (1, 5), (2, 7)] {
            let mut wp = w.clone();
            wp[idx] += h;
            let mut wm = w.clone();
            wm[idx] -= h;
            let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * h);
            assert!((fd - dw[idx]).abs() < 1e-7);
        }
        for idx in [(0, 0), (0, 11), (1, 6)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-7);
        }
    }

    #[test]
    fn batchnorm_backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        store.data_mut(bn.gamma).copy_from_slice(&[1.3, 0.7]);
        store.data_mut(bn.beta).copy_from_slice(&[0.1, -0.2]);
        let xs: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_vec((2, 5), uniform_vec(&mut rng, 10, 2.0)).unwrap())
            .collect();
        let probe: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_vec((2, 5), uniform_vec(&mut rng, 10, 1.0)).unwrap())
            .collect();
        let loss = |xs: &[Array2<f64>]| {
            let mut ys = xs.to_vec();
            bn.forward(&store, &mut ys, Mode::Train);
            ys.iter().zip(&probe).map(|(y, p)| (y * p).sum()).sum::<f64>()
        };
        let mut ys = xs.clone();
        let cache = bn.forward(&store, &mut ys, Mode::Train);
        let mut grads = store.zero_grads();
        let mut d = probe.clone();
        bn.backward(&store, &mut grads, &cache, &mut d);
        let h = 1e-6;
        for (b, c, t) in [(0, 0, 0), (1, 1, 3), (2, 0, 4)] {
            let mut xp = xs.clone();
            xp[b][[c, t]] += h;
            let mut xm = xs.clone();
            xm[b][[c, t]] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!((fd - d[b][[c, t]]).abs() < 1e-6, "{fd} vs {}", d[b][[c, t]]);
        }
    }
}
