//! Word-level side information concatenated with the CNN embedding:
//! precomputed acoustic feature vectors and projected lexical embeddings.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{SegmentConfig, Utterance};
use crate::error::{Error, Result};
use crate::layers::{dropout_mask, Linear, Mode};
use crate::params::{Grads, ParamId, ParamStore};

pub const PROMINENCE_FEATURE_DIM: usize = 34;
pub const BOUNDARY_FEATURE_DIM: usize = 27;

/// Per-word acoustic vectors keyed by `(utterance_id, word_index)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WordFeatureTable {
    pub dim: usize,
    pub rows: HashMap<(String, usize), Vec<f64>>,
}

impl WordFeatureTable {
    pub fn get(&self, utterance_id: &str, word_index: usize) -> Option<&[f64]> {
        self.rows.get(&(utterance_id.to_string(), word_index)).map(Vec::as_slice)
    }

    /// `(words, dim)` matrix for one utterance; every word must be present.
    pub fn utterance_matrix(&self, utt: &Utterance) -> Result<Array2<f64>> {
        let mut m = Array2::<f64>::zeros((utt.len(), self.dim));
        for (i, w) in utt.words.iter().enumerate() {
            let v = self.get(&utt.utterance_id, w.word_index).ok_or_else(|| Error::MissingWord {
                utterance_id: utt.utterance_id.clone(),
                word_index: w.word_index,
            })?;
            m.row_mut(i).assign(&ndarray::ArrayView1::from(v));
        }
        Ok(m)
    }

    /// Errors naming the first corpus word without a vector.
    pub fn check_complete(&self, utts: &[&Utterance]) -> Result<()> {
        for u in utts {
            self.utterance_matrix(u)?;
        }
        Ok(())
    }
}

/// CSV with header `utterance_id,word_index,f1..fD`.
pub fn load_feature_table(path: &Path, expected_dim: usize) -> Result<WordFeatureTable> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() != expected_dim + 2 {
        return Err(Error::FeatureTable {
            row: 1,
            reason: format!("header has {} feature columns, expected {expected_dim}", header.len().saturating_sub(2)),
        });
    }
    let mut table = WordFeatureTable {
        dim: expected_dim,
        rows: HashMap::new(),
    };
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::FeatureTable { row, reason: e.to_string() })?;
        let utt = rec.get(0).unwrap_or_default().to_string();
        let widx: usize = rec
            .get(1)
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| Error::FeatureTable { row, reason: format!("word_index: {e}") })?;
        let values: Vec<f64> = rec
            .iter()
            .skip(2)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::FeatureTable {
                row,
                reason: format!("{utt}#{widx}: {e}"),
            })?;
        if values.len() != expected_dim {
            return Err(Error::FeatureTable {
                row,
                reason: format!("{utt}#{widx} has {} values, expected {expected_dim}", values.len()),
            });
        }
        table.rows.insert((utt, widx), values);
    }
    Ok(table)
}

pub fn write_feature_table(path: &Path, table: &WordFeatureTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["utterance_id".to_string(), "word_index".to_string()];
    header.extend((1..=table.dim).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    let mut keys: Vec<_> = table.rows.keys().collect();
    keys.sort();
    for k in keys {
        let mut rec = vec![k.0.clone(), k.1.to_string()];
        rec.extend(table.rows[k].iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-dimension z-scoring fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Population statistics over the rows; constant dimensions get sd 1.
    pub fn fit(rows: ArrayView2<'_, f64>) -> Self {
        let n = rows.nrows().max(1) as f64;
        let mean = rows.sum_axis(Axis(0)) / n;
        let mut var = vec![0.0; rows.ncols()];
        for r in rows.rows() {
            for (j, v) in r.iter().enumerate() {
                var[j] += (v - mean[j]).powi(2);
            }
        }
        let sd = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean: mean.to_vec(), sd }
    }

    pub fn apply(&self, m: &mut Array2<f64>) {
        for mut r in m.rows_mut() {
            for (j, v) in r.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.sd[j];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LexicalSpec {
    pub embedding_dim: usize,
    pub projection_dim: usize,
    pub dropout: f64,
    pub vocabulary_path: Option<String>,
}

impl Default for LexicalSpec {
    fn default() -> Self {
        Self {
            embedding_dim: 100,
            projection_dim: 300,
            dropout: 0.3,
            vocabulary_path: None,
        }
    }
}

impl LexicalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.projection_dim == 0 {
            return Err(Error::validation("lexical", "dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("lexical.dropout", format!("must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Lowercase and drop everything that is not alphanumeric or an apostrophe.
pub fn normalize_token(token: &str) -> String {
    token
        .chars()
        .filter(|c| c.is_alphanumeric() || *c == '\'')
        .flat_map(char::to_lowercase)
        .collect()
}

/// Pretrained word vectors in the whitespace text format.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    pub dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl Lexicon {
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (String, Vec<f64>)>) -> Self {
        Self {
            dim,
            vectors: pairs.into_iter().map(|(t, v)| (normalize_token(&t), v)).collect(),
        }
    }

    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut vectors = HashMap::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let v: Vec<f64> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::validation(format!("lexicon line {}", i + 1), format!("{e}")))?;
            if v.len() != dim {
                return Err(Error::validation(
                    format!("lexicon line {}", i + 1),
                    format!("expected {dim} values, got {}", v.len()),
                ));
            }
            vectors.insert(normalize_token(token), v);
        }
        Ok(Self { dim, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Embedding of the normalized token, zeros when out of vocabulary.
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        self.vectors
            .get(&normalize_token(token))
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.dim])
    }

    pub fn utterance_matrix(&self, utt: &Utterance) -> Array2<f64> {
        let mut m = Array2::<f64>::zeros((utt.len(), self.dim));
        for (i, w) in utt.words.iter().enumerate() {
            m.row_mut(i).assign(&ndarray::Array1::from(self.lookup(&w.token)));
        }
        m
    }
}

/// Dropout followed by a linear map to the projection width.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexicalProjection {
    pub linear: Linear,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct LexicalCache {
    dropped: Array2<f64>,
}

impl LexicalProjection {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, spec: &LexicalSpec) -> Self {
        Self {
            linear: Linear::new(store, rng, name, spec.embedding_dim, spec.projection_dim),
            dropout: spec.dropout,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.linear.weight, self.linear.bias]
    }

    pub fn forward(&self, store: &ParamStore, emb: ArrayView2<'_, f64>, mode: Mode, rng: &mut ChaCha8Rng) -> (Array2<f64>, LexicalCache) {
        let mask = dropout_mask(rng, emb.dim(), self.dropout, mode);
        let mut dropped = emb.to_owned();
        if let Some(m) = &mask {
            dropped *= m;
        }
        let out = self.linear.forward(store, dropped.view());
        (out, LexicalCache { dropped })
    }

    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, cache: &LexicalCache, dout: ArrayView2<'_, f64>) {
        self.linear.backward(store, grads, cache.dropped.view(), dout);
    }
}

/// Projected lexical vector of one token.
pub fn lexical_embed(store: &ParamStore, proj: &LexicalProjection, lexicon: &Lexicon, token: &str, mode: Mode, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v = lexicon.lookup(token);
    let x = ArrayView2::from_shape((1, v.len()), &v[..]).expect("contiguous");
    let (out, _) = proj.forward(store, x, mode, rng);
    out.row(0).to_vec()
}

/// Concatenates `[cnn, acoustic, lexical]` row-wise, skipping absent parts.
pub fn fuse(cnn: ArrayView2<'_, f64>, acoustic: Option<ArrayView2<'_, f64>>, lexical: Option<ArrayView2<'_, f64>>) -> Result<Array2<f64>> {
    let mut parts = vec![cnn];
    parts.extend(acoustic);
    parts.extend(lexical);
    for p in &parts[1..] {
        if p.nrows() != cnn.nrows() {
            return Err(Error::Shape(format!(
                "fusion inputs cover {} and {} words",
                cnn.nrows(),
                p.nrows()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("fusion", "non-finite side feature"));
        }
    }
    Ok(concatenate(Axis(1), &parts).expect("row counts checked"))
}

/// Fused width for the enabled sources.
pub fn fused_dim(cnn_dim: usize, acoustic_dim: Option<usize>, lexical_dim: Option<usize>) -> usize {
    cnn_dim + acoustic_dim.unwrap_or(0) + lexical_dim.unwrap_or(0)
}

const FRAME: usize = 400;
const HOP: usize = 160;

/// Stand-in word-level acoustic features for corpora without a precomputed
/// table: duration, pauses, intensity and autocorrelation F0 statistics,
/// neighbour differences and within-utterance z-scores (14 + 12 + 8
/// columns). The first 27 form the boundary set. These are not the hand-crafted sets of prior work.
pub fn synthetic_acoustic_features(utt: &Utterance, seg: &SegmentConfig) -> Array2<f64> {
    let n = utt.len();
    let sr = seg.sample_rate_hz as f64;
    let mut base = Array2::<f64>::zeros((n, 14));
    for (i, w) in utt.words.iter().enumerate() {
        let pause_len = ((w.pause_before_ms.min(seg.max_pause_ms) * sr / 1000.0).round() as usize).min(seg.l_max);
        let word_len = (((w.end_s - w.start_s) * sr).round() as usize).clamp(1, seg.l_max - pause_len.min(seg.l_max - 1));
        let end = (pause_len + word_len).min(w.samples.len());
        let x: Vec<f64> = w.samples[pause_len.min(end)..end].iter().map(|&v| v as f64).collect();
        let frames: Vec<&[f64]> = if x.len() >= FRAME {
            (0..=(x.len() - FRAME) / HOP).map(|k| &x[k * HOP..k * HOP + FRAME]).collect()
        } else {
            vec![&x[..]]
        };
        let rms: Vec<f64> = frames
            .iter()
            .map(|f| (f.iter().map(|v| v * v).sum::<f64>() / f.len().max(1) as f64).sqrt())
            .collect();
        let rms_mean = mean(&rms);
        let rms_max = rms.iter().cloned().fold(0.0, f64::max);
        let rms_sd = sd(&rms);
        let f0: Vec<f64> = frames.iter().filter_map(|f| autocorr_f0(f, sr)).collect();
        let (f0_mean, f0_max, f0_min, f0_sd, f0_slope) = if f0.is_empty() {
            (0.0, 0.0, 0.0, 0.0, 0.0)
        } else {
            let mx = f0.iter().cloned().fold(f64::MIN, f64::max);
            let mn = f0.iter().cloned().fold(f64::MAX, f64::min);
            let slope = if f0.len() > 1 { (f0[f0.len() - 1] - f0[0]) / (f0.len() - 1) as f64 } else { 0.0 };
            (mean(&f0), mx, mn, sd(&f0), slope)
        };
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let zcr = x.windows(2).filter(|p| (p[0] >= 0.0) != (p[1] >= 0.0)).count() as f64 / x.len().max(1) as f64;
        let pause_after = utt
            .words
            .get(i + 1)
            .map_or(seg.max_pause_ms, |nx| nx.pause_before_ms.min(seg.max_pause_ms));
        let row = [
            w.end_s - w.start_s,
            w.pause_before_ms.min(seg.max_pause_ms) / 1000.0,
            pause_after / 1000.0,
            rms_mean,
            rms_max,
            rms_sd,
            peak,
            f0_mean,
            f0_max,
            f0_min,
            f0_max - f0_min,
            f0_slope,
            f0_sd,
            zcr,
        ];
        base.row_mut(i).assign(&ndarray::Array1::from(row.to_vec()));
    }
    let ctx = [0usize, 3, 4, 7, 8, 10];
    let mut out = Array2::<f64>::zeros((n, PROMINENCE_FEATURE_DIM));
    let zcols = [0usize, 3, 4, 7, 10, 2, 1, 13];
    let zstats: Vec<(f64, f64)> = zcols
        .iter()
        .map(|&c| {
            let col: Vec<f64> = base.column(c).to_vec();
            (mean(&col), sd(&col))
        })
        .collect();
    for i in 0..n {
        let mut row = base.row(i).to_vec();
        for &c in &ctx {
            row.push(if i > 0 { base[[i, c]] - base[[i - 1, c]] } else { 0.0 });
        }
        for &c in &ctx {
            row.push(if i + 1 < n { base[[i, c]] - base[[i + 1, c]] } else { 0.0 });
        }
        for (k, &c) in zcols.iter().enumerate() {
            let (m, s) = zstats[k];
            row.push(if s > 0.0 { (base[[i, c]] - m) / s } else { 0.0 });
        }
        out.row_mut(i).assign(&ndarray::Array1::from(row));
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Autocorrelation pitch in the 60-400 Hz range; `None` when unvoiced.
fn autocorr_f0(frame: &[f64], sr: f64) -> Option<f64> {
    let min_lag = (sr / 400.0) as usize;
    let max_lag = ((sr / 60.0) as usize).min(frame.len().saturating_sub(1));
    if max_lag <= min_lag {
        return None;
    }
    let energy: f64 = frame.iter().map(|v| v * v).sum();
    if energy < 1e-8 {
        return None;
    }
    let (mut best_lag, mut best) = (0, 0.0);
    for lag in min_lag..=max_lag {
        let r: f64 = frame[..frame.len() - lag].iter().zip(&frame[lag..]).map(|(a, b)| a * b).sum();
        if r > best {
            best = r;
            best_lag = lag;
        }
    }
    (best / energy > 0.3).then(|| sr / best_lag as f64)
}
