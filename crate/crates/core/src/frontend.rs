//! Word-level convolutional front end.
//!
//! A word waveform of fixed length passes through `N` blocks of
//! convolution, batch normalization, ReLU and non-overlapping max pooling.
//! The first block's convolution is either a free filter bank or a bank of
//! band-pass filters built from two learnable cutoffs per filter. The final
//! feature map is max-pooled over time into one embedding per word.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{self, conv_out_len, pool_out_len, BatchNorm, BatchNormCache, Mode};
use crate::params::{Grads, ParamId, ParamStore};

/// Highest allowed low cutoff, in cycles/sample. Keeps `f1 < f2 <= 0.5`.
pub const F1_MAX: f64 = 0.499;
pub const NYQUIST: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FirstLayerKind {
    Standard,
    Sinc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvBlockSpec {
    pub num_filters: usize,
    pub kernel_width: usize,
    pub stride: usize,
    pub pool_width: usize,
}

impl Default for ConvBlockSpec {
    fn default() -> Self {
        Self {
            num_filters: 32,
            kernel_width: 51,
            stride: 1,
            pool_width: 3,
        }
    }
}

impl ConvBlockSpec {
    pub fn new(num_filters: usize, kernel_width: usize, stride: usize, pool_width: usize) -> Self {
        Self {
            num_filters,
            kernel_width,
            stride,
            pool_width,
        }
    }

    /// `(conv_out, pool_out)` for an input of `len` samples.
    pub fn output_len(&self, len: usize) -> Result<(usize, usize)> {
        let conv = conv_out_len(len, self.kernel_width, self.stride).ok_or(Error::InputTooShort {
            len,
            kernel: self.kernel_width,
        })?;
        let pooled = pool_out_len(conv, self.pool_width);
        if pooled == 0 {
            return Err(Error::InputTooShort {
                len: conv,
                kernel: self.pool_width,
            });
        }
        Ok((conv, pooled))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontendSpec {
    pub first_layer_kind: FirstLayerKind,
    pub blocks: Vec<ConvBlockSpec>,
    pub sample_rate_hz: u32,
    /// Lower edge of the mel initialization for sinc filters.
    pub mel_f_min_hz: f64,
}

impl Default for FrontendSpec {
    /// Four 32-filter blocks; the first is a sinc layer of width 31 and stride 2.
    fn default() -> Self {
        Self::with_first_layer(FirstLayerKind::Sinc, 31, 2)
    }
}

impl FrontendSpec {
    /// Default four-block stack with a custom first layer.
    pub fn with_first_layer(kind: FirstLayerKind, kernel_width: usize, stride: usize) -> Self {
        let mut blocks = vec![ConvBlockSpec::default(); 4];
        blocks[0].kernel_width = kernel_width;
        blocks[0].stride = stride;
        Self {
            first_layer_kind: kind,
            blocks,
            sample_rate_hz: 16_000,
            mel_f_min_hz: 30.0,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.num_filters)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::validation("frontend.blocks", "at least one block is required"));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.num_filters == 0 || b.kernel_width == 0 || b.stride == 0 || b.pool_width == 0 {
                return Err(Error::validation(
                    format!("frontend.blocks[{i}]"),
                    "filters, kernel width, stride and pool width must be positive",
                ));
            }
        }
        if self.first_layer_kind == FirstLayerKind::Sinc && self.blocks[0].kernel_width % 2 == 0 {
            return Err(Error::validation("frontend.blocks[0].kernel_width", "sinc kernels need an odd width"));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::validation("frontend.sample_rate_hz", "must be positive"));
        }
        Ok(())
    }

    /// Per-block `(conv_out, pool_out)` for a segment of `len` samples.
    pub fn output_lengths(&self, len: usize) -> Result<Vec<(usize, usize)>> {
        let mut cur = len;
        let mut out = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let lens = b.output_len(cur)?;
            cur = lens.1;
            out.push(lens);
        }
        Ok(out)
    }
}

/// Learnable cutoffs of a sinc filter bank, in cycles/sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SincFilterbankParams {
    pub f_low: Vec<f64>,
    pub band: Vec<f64>,
    pub kernel_width: usize,
    pub stride: usize,
}

impl SincFilterbankParams {
    pub fn num_filters(&self) -> usize {
        self.f_low.len()
    }

    /// Effective `(f1, f2)` of filter `i` after the absolute-value
    /// reparameterization and clamping.
    pub fn cutoffs(&self, i: usize) -> (f64, f64) {
        effective_cutoffs(self.f_low[i], self.band[i])
    }
}

pub fn effective_cutoffs(f_low: f64, band: f64) -> (f64, f64) {
    let f1 = f_low.abs().min(F1_MAX);
    let f2 = (f1 + band.abs()).min(NYQUIST);
    (f1, f2)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Mel-spaced initialization: `num_filters + 2` equally spaced mel points,
/// filter `i` spanning points `i` to `i + 2`.
pub fn mel_init(num_filters: usize, sample_rate_hz: f64, f_min_hz: f64, f_max_hz: Option<f64>, kernel_width: usize, stride: usize) -> Result<SincFilterbankParams> {
    let nyquist = sample_rate_hz / 2.0;
    let f_max_hz = f_max_hz.unwrap_or(nyquist);
    if num_filters == 0 {
        return Err(Error::validation("num_filters", "must be at least 1"));
    }
    if !(sample_rate_hz > 0.0) {
        return Err(Error::validation("sample_rate_hz", "must be positive"));
    }
    if !(f_min_hz >= 0.0 && f_min_hz < f_max_hz && f_max_hz <= nyquist) {
        return Err(Error::validation(
            "f_min_hz/f_max_hz",
            format!("need 0 <= f_min < f_max <= {nyquist}, got {f_min_hz}..{f_max_hz}"),
        ));
    }
    let (m_lo, m_hi) = (hz_to_mel(f_min_hz), hz_to_mel(f_max_hz));
    let points: Vec<f64> = (0..num_filters + 2)
        .map(|i| {
            if i == num_filters + 1 {
                f_max_hz
            } else {
                mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (num_filters + 1) as f64)
            }
        })
        .collect();
    let mut f_low = Vec::with_capacity(num_filters);
    let mut band = Vec::with_capacity(num_filters);
    for i in 0..num_filters {
        let lo = if i == 0 { f_min_hz } else { points[i] };
        f_low.push(lo / sample_rate_hz);
        band.push((points[i + 2] - lo) / sample_rate_hz);
    }
    Ok(SincFilterbankParams {
        f_low,
        band,
        kernel_width,
        stride,
    })
}

pub fn hamming(width: usize) -> Vec<f64> {
    if width == 1 {
        return vec![1.0];
    }
    (0..width)
        .map(|k| 0.54 - 0.46 * (2.0 * PI * k as f64 / (width - 1) as f64).cos())
        .collect()
}

/// `2 f sinc(2 pi f n)` with `sinc(0) = 1`.
fn lowpass_tap(f: f64, n: f64) -> f64 {
    if n == 0.0 {
        2.0 * f
    } else {
        (2.0 * PI * f * n).sin() / (PI * n)
    }
}

/// Windowed difference-of-lowpass kernels, one row per filter.
pub fn sinc_kernels(params: &SincFilterbankParams) -> Array2<f64> {
    let w = params.kernel_width;
    let half = (w as f64 - 1.0) / 2.0;
    let window = hamming(w);
    let mut k = Array2::<f64>::zeros((params.num_filters(), w));
    for i in 0..params.num_filters() {
        let (f1, f2) = params.cutoffs(i);
        for (j, win) in window.iter().enumerate() {
            let n = j as f64 - half;
            k[[i, j]] = (lowpass_tap(f2, n) - lowpass_tap(f1, n)) * win;
        }
    }
    k
}

/// Chain rule from kernel gradients to `(d f_low, d band)`.
pub fn sinc_kernel_grads(params: &SincFilterbankParams, dkernel: ArrayView2<'_, f64>) -> (Vec<f64>, Vec<f64>) {
    let w = params.kernel_width;
    let half = (w as f64 - 1.0) / 2.0;
    let window = hamming(w);
    let mut d_low = vec![0.0; params.num_filters()];
    let mut d_band = vec![0.0; params.num_filters()];
    for i in 0..params.num_filters() {
        let (fl, bw) = (params.f_low[i], params.band[i]);
        let (f1, f2) = params.cutoffs(i);
        // d(2 f sinc(2 pi f n))/df = 2 cos(2 pi f n)
        let (mut g1, mut g2) = (0.0, 0.0);
        for (j, win) in window.iter().enumerate() {
            let n = j as f64 - half;
            let d = dkernel[[i, j]] * win;
            g2 += d * 2.0 * (2.0 * PI * f2 * n).cos();
            g1 -= d * 2.0 * (2.0 * PI * f1 * n).cos();
        }
        let f1_live = fl.abs() <= F1_MAX;
        let f2_live = f1 + bw.abs() <= NYQUIST;
        let df1_dlow = if f1_live { fl.signum() } else { 0.0 };
        let df2 = if f2_live { 1.0 } else { 0.0 };
        d_low[i] = g1 * df1_dlow + g2 * df2 * df1_dlow;
        d_band[i] = g2 * df2 * bw.signum();
    }
    (d_low, d_band)
}

/// Magnitude of the kernel's frequency response at normalized frequencies `freqs`.
pub fn magnitude_response(kernel: ArrayView1<'_, f64>, freqs: &[f64]) -> Vec<f64> {
    freqs
        .iter()
        .map(|&f| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &g) in kernel.iter().enumerate() {
                let ph = -2.0 * PI * f * n as f64;
                re += g * ph.cos();
                im += g * ph.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// One filter's cutoffs in Hz and sampled magnitude response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRow {
    pub index: usize,
    pub f1_hz: f64,
    pub f2_hz: f64,
    pub response: Vec<f64>,
}

/// Cutoff table for a filter bank, responses sampled at `freqs_hz`.
pub fn filter_table(params: &SincFilterbankParams, sample_rate_hz: u32, freqs_hz: &[f64]) -> Vec<FilterRow> {
    let sr = sample_rate_hz as f64;
    let norm: Vec<f64> = freqs_hz.iter().map(|f| f / sr).collect();
    let kernels = sinc_kernels(params);
    (0..params.num_filters())
        .map(|i| {
            let (f1, f2) = params.cutoffs(i);
            FilterRow {
                index: i,
                f1_hz: f1 * sr,
                f2_hz: f2 * sr,
                response: magnitude_response(kernels.row(i), &norm),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SincLayer {
    pub f_low: ParamId,
    pub band: ParamId,
    pub num_filters: usize,
    pub kernel_width: usize,
    pub stride: usize,
}

impl SincLayer {
    pub fn params(&self, store: &ParamStore) -> SincFilterbankParams {
        SincFilterbankParams {
            f_low: store.data(self.f_low).to_vec(),
            band: store.data(self.band).to_vec(),
            kernel_width: self.kernel_width,
            stride: self.stride,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_width: usize,
    pub stride: usize,
}

impl ConvLayer {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, in_channels: usize, spec: &ConvBlockSpec) -> Self {
        let fan_in = in_channels * spec.kernel_width;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            &[spec.num_filters, in_channels, spec.kernel_width],
            layers::uniform_vec(rng, spec.num_filters * fan_in, bound),
        );
        let bias = store.add(
            format!("{name}.bias"),
            &[spec.num_filters],
            layers::uniform_vec(rng, spec.num_filters, bound),
        );
        Self {
            weight,
            bias,
            in_channels,
            out_channels: spec.num_filters,
            kernel_width: spec.kernel_width,
            stride: spec.stride,
        }
    }
}

/// Convolution of a block: learned free filters or parameterized sinc filters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum Conv {
    Standard(ConvLayer),
    Sinc(SincLayer),
}

impl Conv {
    pub fn new_first(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, spec: &FrontendSpec) -> Result<Self> {
        let b = &spec.blocks[0];
        Ok(match spec.first_layer_kind {
            FirstLayerKind::Standard => Conv::Standard(ConvLayer::new(store, rng, name, 1, b)),
            FirstLayerKind::Sinc => {
                let init = mel_init(
                    b.num_filters,
                    spec.sample_rate_hz as f64,
                    spec.mel_f_min_hz,
                    None,
                    b.kernel_width,
                    b.stride,
                )?;
                Conv::Sinc(SincLayer {
                    f_low: store.add(format!("{name}.f_low"), &[b.num_filters], init.f_low),
                    band: store.add(format!("{name}.band"), &[b.num_filters], init.band),
                    num_filters: b.num_filters,
                    kernel_width: b.kernel_width,
                    stride: b.stride,
                })
            }
        })
    }

    pub fn kernel_width(&self) -> usize {
        match self {
            Conv::Standard(c) => c.kernel_width,
            Conv::Sinc(s) => s.kernel_width,
        }
    }

    pub fn stride(&self) -> usize {
        match self {
            Conv::Standard(c) => c.stride,
            Conv::Sinc(s) => s.stride,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            Conv::Standard(c) => vec![c.weight, c.bias],
            Conv::Sinc(s) => vec![s.f_low, s.band],
        }
    }

    fn weight_matrix(&self, store: &ParamStore) -> Array2<f64> {
        match self {
            Conv::Standard(c) => store.matrix(c.weight).to_owned(),
            Conv::Sinc(s) => sinc_kernels(&s.params(store)),
        }
    }

    /// Convolves every `(in_ch, len)` input.
    pub fn forward(&self, store: &ParamStore, xs: &[ArrayView2<'_, f64>]) -> Result<Vec<Array2<f64>>> {
        let w = self.weight_matrix(store);
        let (k, s) = (self.kernel_width(), self.stride());
        xs.iter()
            .map(|x| {
                if x.ncols() < k {
                    return Err(Error::InputTooShort { len: x.ncols(), kernel: k });
                }
                let mut y = layers::conv1d(*x, w.view(), k, s);
                if let Conv::Standard(c) = self {
                    let b = store.vector(c.bias);
                    for (mut row, bias) in y.rows_mut().into_iter().zip(b.iter()) {
                        row += *bias;
                    }
                }
                Ok(y)
            })
            .collect()
    }

    /// Accumulates parameter gradients; returns input gradients when asked.
    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, xs: &[ArrayView2<'_, f64>], dys: &[Array2<f64>], need_dx: bool) -> Vec<Array2<f64>> {
        let w = self.weight_matrix(store);
        let (k, s) = (self.kernel_width(), self.stride());
        let mut dw = Array2::<f64>::zeros(w.raw_dim());
        let mut dxs = Vec::new();
        for (x, dy) in xs.iter().zip(dys) {
            let (dwi, dx) = layers::conv1d_backward(*x, w.view(), dy.view(), k, s, need_dx);
            dw += &dwi;
            if let Some(dx) = dx {
                dxs.push(dx);
            }
        }
        match self {
            Conv::Standard(c) => {
                let mut gw = grads.matrix_mut(c.weight);
                gw += &dw;
                let mut gb = grads.vector_mut(c.bias);
                for dy in dys {
                    gb += &dy.sum_axis(ndarray::Axis(1));
                }
            }
            Conv::Sinc(sl) => {
                let (dl, db) = sinc_kernel_grads(&sl.params(store), dw.view());
                for (g, d) in grads.slot_mut(sl.f_low).iter_mut().zip(dl) {
                    *g += d;
                }
                for (g, d) in grads.slot_mut(sl.band).iter_mut().zip(db) {
                    *g += d;
                }
            }
        }
        dxs
    }
}

/// Convolution, batch normalization, ReLU and max pooling.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConvBlock {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub pool_width: usize,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    /// Block input, kept for blocks past the first.
    input: Option<Vec<Array2<f64>>>,
    bn: BatchNormCache,
    pooled: Vec<Array2<f64>>,
    argmax: Vec<Array2<u32>>,
    conv_len: usize,
}

impl ConvBlock {
    /// Normalization, activation and pooling of an already convolved batch.
    fn finish(&self, store: &ParamStore, mut conv: Vec<Array2<f64>>, input: Option<Vec<Array2<f64>>>, mode: Mode) -> BlockCache {
        let conv_len = conv.first().map_or(0, |c| c.ncols());
        let bn = self.bn.forward(store, &mut conv, mode);
        let (pooled, argmax) = conv.iter().map(|y| layers::relu_maxpool(y, self.pool_width)).unzip();
        BlockCache {
            input,
            bn,
            pooled,
            argmax,
            conv_len,
        }
    }

    /// Full block on a batch of `(in_ch, len)` maps.
    pub fn forward(&self, store: &ParamStore, xs: Vec<Array2<f64>>, mode: Mode) -> Result<(Vec<Array2<f64>>, BlockCache)> {
        let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
        let conv = self.conv.forward(store, &views)?;
        let cache = self.finish(store, conv, Some(xs), mode);
        Ok((cache.pooled.clone(), cache))
    }

    /// Gradient w.r.t. the convolution output.
    fn backward_to_conv(&self, store: &ParamStore, grads: &mut Grads, cache: &BlockCache, dpooled: &[Array2<f64>]) -> Vec<Array2<f64>> {
        let mut d: Vec<Array2<f64>> = dpooled
            .iter()
            .zip(cache.pooled.iter().zip(&cache.argmax))
            .map(|(dp, (p, a))| layers::relu_maxpool_backward(dp, p, a, cache.conv_len))
            .collect();
        self.bn.backward(store, grads, &cache.bn, &mut d);
        d
    }
}

/// Free-standing block evaluation on one feature map.
pub fn conv_block(store: &ParamStore, block: &ConvBlock, x: ArrayView2<'_, f64>, mode: Mode) -> Result<Array2<f64>> {
    let (mut out, _) = block.forward(store, vec![x.to_owned()], mode)?;
    Ok(out.remove(0))
}

/// A stack of conv blocks ending in a temporal max over the last map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Frontend {
    pub spec: FrontendSpec,
    pub blocks: Vec<ConvBlock>,
}

#[derive(Debug, Clone)]
pub struct FrontendCache {
    blocks: Vec<BlockCache>,
    /// Time index of the maximum per word and channel.
    global_argmax: Vec<Vec<usize>>,
    last_len: usize,
}

impl FrontendCache {
    /// Per-block batch `(mean, unbiased var)`.
    pub fn batch_stats(&self) -> Vec<(Array1<f64>, Array1<f64>)> {
        self.blocks
            .iter()
            .map(|b| (b.bn.batch_mean.clone(), b.bn.batch_var_unbiased.clone()))
            .collect()
    }
}

impl Frontend {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, spec: &FrontendSpec) -> Result<Self> {
        spec.validate()?;
        let first = Conv::new_first(store, rng, &format!("{name}.block0.conv"), spec)?;
        Ok(Self::with_first(store, rng, name, spec, first))
    }

    /// Builds the stack around an existing (possibly shared) first convolution.
    pub fn with_first(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, spec: &FrontendSpec, first: Conv) -> Self {
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        let mut in_ch = spec.blocks[0].num_filters;
        for (i, b) in spec.blocks.iter().enumerate() {
            let conv = if i == 0 {
                first
            } else {
                let c = Conv::Standard(ConvLayer::new(store, rng, &format!("{name}.block{i}.conv"), in_ch, b));
                in_ch = b.num_filters;
                c
            };
            blocks.push(ConvBlock {
                conv,
                bn: BatchNorm::new(store, &format!("{name}.block{i}.bn"), b.num_filters),
                pool_width: b.pool_width,
            });
        }
        Self {
            spec: spec.clone(),
            blocks,
        }
    }

    pub fn first_conv(&self) -> &Conv {
        &self.blocks[0].conv
    }

    pub fn embedding_dim(&self) -> usize {
        self.spec.embedding_dim()
    }

    pub fn sinc_layer(&self) -> Option<SincLayer> {
        match self.blocks[0].conv {
            Conv::Sinc(s) => Some(s),
            Conv::Standard(_) => None,
        }
    }

    /// Every parameter id used by this front end, first-layer ones first.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for b in &self.blocks {
            ids.extend(b.conv.param_ids());
            ids.extend([b.bn.gamma, b.bn.beta, b.bn.running_mean, b.bn.running_var]);
        }
        ids
    }

    /// First-layer convolution of raw segments, `(filters, conv_len)` each.
    pub fn first_conv_forward(&self, store: &ParamStore, segments: &[&[f64]]) -> Result<Vec<Array2<f64>>> {
        let views: Vec<ArrayView2<'_, f64>> = segments
            .iter()
            .map(|s| ArrayView2::from_shape((1, s.len()), *s).expect("contiguous"))
            .collect();
        self.blocks[0].conv.forward(store, &views)
    }

    /// Everything after the first convolution. Returns `(words, embedding_dim)`.
    pub fn forward_from_first(&self, store: &ParamStore, conv0: Vec<Array2<f64>>, mode: Mode) -> Result<(Array2<f64>, FrontendCache)> {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let first = self.blocks[0].finish(store, conv0, None, mode);
        let mut x = first.pooled.clone();
        caches.push(first);
        for b in &self.blocks[1..] {
            let (y, c) = b.forward(store, x, mode)?;
            caches.push(c);
            x = y;
        }
        let dim = self.embedding_dim();
        let last_len = x.first().map_or(0, |m| m.ncols());
        let mut emb = Array2::<f64>::zeros((x.len(), dim));
        let mut global_argmax = Vec::with_capacity(x.len());
        for (w, m) in x.iter().enumerate() {
            let mut args = Vec::with_capacity(dim);
            for (c, row) in m.rows().into_iter().enumerate() {
                let (mut best, mut bv) = (0, f64::NEG_INFINITY);
                for (t, &v) in row.iter().enumerate() {
                    if v > bv {
                        bv = v;
                        best = t;
                    }
                }
                emb[[w, c]] = bv;
                args.push(best);
            }
            global_argmax.push(args);
        }
        Ok((
            emb,
            FrontendCache {
                blocks: caches,
                global_argmax,
                last_len,
            },
        ))
    }

    pub fn forward(&self, store: &ParamStore, segments: &[&[f64]], mode: Mode) -> Result<(Array2<f64>, FrontendCache)> {
        let conv0 = self.first_conv_forward(store, segments)?;
        self.forward_from_first(store, conv0, mode)
    }

    /// Back-propagates embedding gradients down to the first convolution's output.
    pub fn backward_to_first(&self, store: &ParamStore, grads: &mut Grads, cache: &FrontendCache, demb: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let channels = self.embedding_dim();
        let mut d: Vec<Array2<f64>> = cache
            .global_argmax
            .iter()
            .enumerate()
            .map(|(w, args)| {
                let mut m = Array2::<f64>::zeros((channels, cache.last_len));
                for (c, &t) in args.iter().enumerate() {
                    m[[c, t]] = demb[[w, c]];
                }
                m
            })
            .collect();
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let dconv = b.backward_to_conv(store, grads, &cache.blocks[i], &d);
            if i == 0 {
                return dconv;
            }
            let inputs = cache.blocks[i].input.as_ref().expect("inner blocks keep their input");
            let views: Vec<_> = inputs.iter().map(|x| x.view()).collect();
            d = b.conv.backward(store, grads, &views, &dconv, true);
        }
        unreachable!("frontend has at least one block")
    }

    pub fn first_conv_backward(&self, store: &ParamStore, grads: &mut Grads, segments: &[&[f64]], dconv0: &[Array2<f64>]) {
        let views: Vec<ArrayView2<'_, f64>> = segments
            .iter()
            .map(|s| ArrayView2::from_shape((1, s.len()), *s).expect("contiguous"))
            .collect();
        self.blocks[0].conv.backward(store, grads, &views, dconv0, false);
    }

    /// Overwrites every block's running statistics with `(mean, unbiased var)` pairs.
    pub fn set_running(&self, store: &mut ParamStore, stats: &[(Array1<f64>, Array1<f64>)]) {
        for (b, (m, v)) in self.blocks.iter().zip(stats) {
            store.data_mut(b.bn.running_mean).copy_from_slice(m.as_slice().expect("contiguous"));
            store.data_mut(b.bn.running_var).copy_from_slice(v.as_slice().expect("contiguous"));
        }
    }

    pub fn update_running(&self, store: &mut ParamStore, cache: &FrontendCache) {
        for (b, c) in self.blocks.iter().zip(&cache.blocks) {
            b.bn.update_running(store, &c.bn);
        }
    }
}

/// Embedding of a single prepared segment.
pub fn word_embed(store: &ParamStore, frontend: &Frontend, segment: &[f64], mode: Mode) -> Result<Array1<f64>> {
    let (emb, _) = frontend.forward(store, &[segment], mode)?;
    Ok(emb.row(0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn conv_length_arithmetic() {
        assert_eq!(ConvBlockSpec::new(32, 31, 2, 3).output_len(28_660).unwrap().0, 14_315);
        assert_eq!(ConvBlockSpec::new(32, 51, 1, 3).output_len(28_660).unwrap().0, 28_610);
        assert_eq!(ConvBlockSpec::new(1, 1, 1, 3).output_len(9).unwrap(), (9, 3));
        assert!(matches!(
            ConvBlockSpec::new(32, 51, 1, 3).output_len(50),
            Err(Error::InputTooShort { len: 50, kernel: 51 })
        ));
    }

    #[test]
    fn mel_init_single_filter_spans_whole_range() {
        let p = mel_init(1, 16_000.0, 30.0, None, 31, 1).unwrap();
        let (f1, f2) = p.cutoffs(0);
        assert!((f1 * 16_000.0 - 30.0).abs() < 1e-9);
        assert!((f2 * 16_000.0 - 8_000.0).abs() < 1e-9);
    }

    #[test]
    fn mel_init_anchors_and_overlap() {
        let p = mel_init(32, 16_000.0, 30.0, None, 31, 1).unwrap();
        assert!((p.f_low[0] * 16_000.0 - 30.0).abs() < 1e-9);
        for i in 0..30 {
            let upper = p.f_low[i] + p.band[i];
            assert!((upper - p.f_low[i + 2]).abs() < 1e-12);
        }
        for i in 1..32 {
            assert!(p.f_low[i] >= p.f_low[i - 1]);
            assert!(p.f_low[i] + p.band[i] >= p.f_low[i - 1] + p.band[i - 1]);
        }
        assert!(p.f_low.iter().chain(&p.band).all(|v| *v > 0.0));
    }

    #[test]
    fn mel_init_rejects_bad_bounds() {
        assert!(mel_init(8, 16_000.0, 9_000.0, None, 31, 1).is_err());
        assert!(mel_init(8, 16_000.0, 100.0, Some(50.0), 31, 1).is_err());
        assert!(mel_init(0, 16_000.0, 30.0, None, 31, 1).is_err());
    }

    #[test]
    fn zero_band_gives_zero_kernel_and_center_tap_rule() {
        let p = SincFilterbankParams {
            f_low: vec![0.1, 0.05],
            band: vec![0.0, 0.1],
            kernel_width: 31,
            stride: 1,
        };
        let k = sinc_kernels(&p);
        assert!(k.row(0).iter().all(|&v| v == 0.0));
        let w = hamming(31);
        assert!((k[[1, 15]] - 2.0 * (0.15 - 0.05) * w[15]).abs() < 1e-15);
    }

    #[test]
    fn sign_violations_are_absorbed() {
        let (f1, f2) = effective_cutoffs(-0.1, -0.05);
        assert!((f1 - 0.1).abs() < 1e-15 && (f2 - 0.15).abs() < 1e-15);
        let (f1, f2) = effective_cutoffs(0.7, 0.3);
        assert!(f1 < f2 && f2 <= NYQUIST);
    }

    #[test]
    fn standard_first_layer_has_no_sinc() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = FrontendSpec::with_first_layer(FirstLayerKind::Standard, 51, 1);
        let fe = Frontend::new(&mut store, &mut rng, "fe", &spec).unwrap();
        assert!(fe.sinc_layer().is_none());
    }

    #[test]
    fn even_sinc_width_rejected() {
        let spec = FrontendSpec::with_first_layer(FirstLayerKind::Sinc, 30, 1);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn eval_with_batch_stats_matches_train() {
        let spec = FrontendSpec {
            first_layer_kind: FirstLayerKind::Sinc,
            blocks: vec![ConvBlockSpec::new(4, 31, 2, 4), ConvBlockSpec::new(4, 11, 1, 4), ConvBlockSpec::new(6, 5, 1, 3)],
            ..FrontendSpec::default()
        };
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fe = Frontend::new(&mut store, &mut rng, "fe", &spec).unwrap();
        let segs: Vec<Vec<f64>> = (0..3)
            .map(|w| (0..1200).map(|t| ((t * (w + 3)) as f64 * 0.05).sin() * (w + 1) as f64 * 0.2).collect())
            .collect();
        let refs: Vec<&[f64]> = segs.iter().map(|s| s.as_slice()).collect();
        let (train, cache) = fe.forward(&store, &refs, Mode::Train).unwrap();
        for (b, c) in fe.blocks.iter().zip(&cache.blocks) {
            let n: usize = c.bn.xhat.iter().map(|x| x.ncols()).sum();
            let f = (n as f64 - 1.0) / n as f64;
            store.data_mut(b.bn.running_mean).copy_from_slice(c.bn.batch_mean.as_slice().unwrap());
            let v: Vec<f64> = c.bn.batch_var_unbiased.iter().map(|v| v * f).collect();
            store.data_mut(b.bn.running_var).copy_from_slice(&v);
        }
        let (eval, _) = fe.forward(&store, &refs, Mode::Eval).unwrap();
        for (a, b) in train.iter().zip(eval.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
