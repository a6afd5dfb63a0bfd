//! Training loop, early stopping, ensembling and the nested
//! speaker-independent cross-validation protocol.

use std::collections::BTreeSet;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, EpochRecord, FeatureStats};
use crate::corpus::{inner_folds, make_folds, Corpus, SegmentConfig, Utterance, DEFAULT_INNER_FOLDS};
use crate::error::{Error, Result};
use crate::evalkit::{fold_summary, pearson};
use crate::fusion::{synthetic_acoustic_features, Lexicon, Standardizer, WordFeatureTable};
use crate::layers::Mode;
use crate::mtl::{build_model, total_loss, total_loss_grad, LossScales, Model, ModelInput, ModelSpec, Predictions};
use crate::optim::{Adam, AdamConfig};

/// Training batches used to re-estimate normalization statistics after each epoch.
pub const MAX_CALIBRATION_BATCHES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValLoss,
    ValPearson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Utterances per optimizer step.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub monitor: Monitor,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            early_stop_patience: 12,
            seed: 0,
            monitor: Monitor::ValLoss,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(format!("train.learning_rate: must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            out.push("train.batch_size: must be positive".into());
        }
        if self.max_epochs == 0 {
            out.push("train.max_epochs: must be positive".into());
        }
        if self.early_stop_patience == 0 {
            out.push("train.early_stop_patience: must be at least 1".into());
        }
        out
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Patience-based stopping on a monitored validation value.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    higher_is_better: bool,
    best: Option<f64>,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, higher_is_better: bool) -> Self {
        Self {
            patience,
            higher_is_better,
            best: None,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records an epoch; true when it is a new best.
    pub fn observe(&mut self, epoch: usize, value: f64) -> bool {
        let better = match self.best {
            None => true,
            Some(b) if self.higher_is_better => value > b,
            Some(b) => value < b,
        };
        if better {
            self.best = Some(value);
            self.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        better
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Per-word acoustic tables for the two tasks.
#[derive(Debug, Clone, Default)]
pub struct FeatureTables {
    pub prominence: WordFeatureTable,
    pub boundary: WordFeatureTable,
}

impl FeatureTables {
    /// Stand-in features computed from the waveforms; boundary set = first `bound_dim` columns.
    pub fn synthetic(corpus: &Corpus, seg: &SegmentConfig, prom_dim: usize, bound_dim: usize) -> Result<Self> {
        let full = crate::fusion::PROMINENCE_FEATURE_DIM;
        if prom_dim > full || bound_dim > full {
            return Err(Error::validation("fusion", format!("synthetic features provide at most {full} dimensions")));
        }
        let mut t = FeatureTables {
            prominence: WordFeatureTable {
                dim: prom_dim,
                ..Default::default()
            },
            boundary: WordFeatureTable {
                dim: bound_dim,
                ..Default::default()
            },
        };
        for u in &corpus.utterances {
            let f = synthetic_acoustic_features(u, seg);
            for (i, w) in u.words.iter().enumerate() {
                let row = f.row(i);
                let key = (u.utterance_id.clone(), w.word_index);
                t.prominence.rows.insert(key.clone(), row.iter().take(prom_dim).copied().collect());
                t.boundary.rows.insert(key, row.iter().take(bound_dim).copied().collect());
            }
        }
        Ok(t)
    }
}

/// Everything besides waveforms that a model input may need.
#[derive(Debug, Clone, Default)]
pub struct DataContext {
    pub features: Option<FeatureTables>,
    pub lexicon: Option<Lexicon>,
}

impl DataContext {
    /// Fills in synthetic acoustic features when the spec asks for them and no table was supplied.
    pub fn for_spec(spec: &ModelSpec, corpus: &Corpus, seg: &SegmentConfig) -> Result<Self> {
        let mut ctx = DataContext::default();
        if spec.fusion.use_acoustic_features {
            ctx.features = Some(FeatureTables::synthetic(
                corpus,
                seg,
                spec.fusion.prominence_feature_dim,
                spec.fusion.boundary_feature_dim,
            )?);
        }
        if spec.fusion.use_lexical {
            let dim = spec.fusion.lexical.embedding_dim;
            ctx.lexicon = Some(match &spec.fusion.lexical.vocabulary_path {
                Some(p) => Lexicon::load(std::path::Path::new(p), dim)?,
                None => Lexicon::from_pairs(dim, []),
            });
        }
        Ok(ctx)
    }
}

fn stack(mats: Vec<Array2<f64>>, dim: usize) -> Array2<f64> {
    if mats.is_empty() {
        return Array2::zeros((0, dim));
    }
    let views: Vec<_> = mats.iter().map(|m| m.view()).collect();
    concatenate(Axis(0), &views).expect("uniform width")
}

/// Fits standardization on the given (training) utterances.
pub fn fit_feature_stats(spec: &ModelSpec, utts: &[&Utterance], ctx: &DataContext) -> Result<FeatureStats> {
    if !spec.fusion.use_acoustic_features {
        return Ok(FeatureStats::default());
    }
    let tables = ctx
        .features
        .as_ref()
        .ok_or_else(|| Error::validation("fusion", "acoustic features enabled but no feature table supplied"))?;
    let prom = stack(
        utts.iter().map(|u| tables.prominence.utterance_matrix(u)).collect::<Result<_>>()?,
        tables.prominence.dim,
    );
    let bound = if spec.architecture.has_boundary() {
        let b = stack(
            utts.iter().map(|u| tables.boundary.utterance_matrix(u)).collect::<Result<_>>()?,
            tables.boundary.dim,
        );
        Some(Standardizer::fit(b.view()))
    } else {
        None
    };
    Ok(FeatureStats {
        prominence: Some(Standardizer::fit(prom.view())),
        boundary: bound,
    })
}

/// Assembles the model input for a batch of utterances.
pub fn build_input(spec: &ModelSpec, utts: &[&Utterance], ctx: &DataContext, stats: &FeatureStats) -> Result<ModelInput> {
    let mut input = ModelInput {
        segments: utts
            .iter()
            .flat_map(|u| u.words.iter().map(|w| w.samples.iter().map(|&v| v as f64).collect()))
            .collect(),
        lengths: utts.iter().map(|u| u.len()).collect(),
        ..ModelInput::default()
    };
    if spec.fusion.use_acoustic_features {
        let tables = ctx
            .features
            .as_ref()
            .ok_or_else(|| Error::validation("fusion", "acoustic features enabled but no feature table supplied"))?;
        let mut p = stack(
            utts.iter().map(|u| tables.prominence.utterance_matrix(u)).collect::<Result<_>>()?,
            tables.prominence.dim,
        );
        if let Some(s) = &stats.prominence {
            s.apply(&mut p);
        }
        input.prom_features = Some(p);
        if spec.architecture.has_boundary() {
            let mut b = stack(
                utts.iter().map(|u| tables.boundary.utterance_matrix(u)).collect::<Result<_>>()?,
                tables.boundary.dim,
            );
            if let Some(s) = &stats.boundary {
                s.apply(&mut b);
            }
            input.bound_features = Some(b);
        }
    }
    if spec.fusion.use_lexical {
        let lex = ctx
            .lexicon
            .as_ref()
            .ok_or_else(|| Error::validation("fusion", "lexical fusion enabled but no lexicon loaded"))?;
        input.lexical = Some(stack(utts.iter().map(|u| lex.utterance_matrix(u)).collect(), lex.dim));
    }
    Ok(input)
}

fn targets(utts: &[&Utterance]) -> (Vec<f64>, Vec<f64>) {
    let p = utts.iter().flat_map(|u| u.prominence()).collect();
    let b = utts.iter().flat_map(|u| u.boundary()).collect();
    (p, b)
}

/// Inference over `utts` in chunks of `chunk` utterances.
pub fn predict_with(model: &Model, utts: &[&Utterance], ctx: &DataContext, stats: &FeatureStats, chunk: usize) -> Result<Predictions> {
    let mut out = Predictions {
        prominence: Vec::new(),
        boundary: model.boundary.as_ref().map(|_| Vec::new()),
        lengths: Vec::new(),
    };
    for batch in utts.chunks(chunk.max(1)) {
        let input = build_input(&model.spec, batch, ctx, stats)?;
        let p = model.predict(&input)?;
        out.prominence.extend(p.prominence);
        if let (Some(acc), Some(b)) = (&mut out.boundary, p.boundary) {
            acc.extend(b);
        }
        out.lengths.extend(p.lengths);
    }
    Ok(out)
}

pub fn predict_checkpoint(ckpt: &Checkpoint, utts: &[&Utterance], ctx: &DataContext) -> Result<Predictions> {
    let model = ckpt.model()?;
    predict_with(&model, utts, ctx, &ckpt.feature_stats, 16)
}

fn evaluate(model: &Model, utts: &[&Utterance], ctx: &DataContext, stats: &FeatureStats, scales: LossScales, chunk: usize) -> Result<(f64, Option<f64>)> {
    let preds = predict_with(model, utts, ctx, stats, chunk)?;
    let (pt, bt) = targets(utts);
    let bound = preds.boundary.as_deref().map(|b| (b, bt.as_slice()));
    let loss = total_loss(&preds.prominence, &pt, bound, model.spec.effective_alpha(), scales)?;
    Ok((loss.total, pearson(&preds.prominence, &pt).ok()))
}

/// Loss and gradient step on one batch; returns the loss before the step.
pub fn train_step(model: &mut Model, adam: &mut Adam, input: &ModelInput, utts: &[&Utterance], scales: LossScales, rng: &mut ChaCha8Rng) -> Result<crate::mtl::LossValue> {
    let (pt, bt) = targets(utts);
    let alpha = model.spec.effective_alpha();
    let (preds, cache) = model.forward(input, Mode::Train, rng)?;
    let bound = preds.boundary.as_deref().map(|b| (b, bt.as_slice()));
    let loss = total_loss(&preds.prominence, &pt, bound, alpha, scales)?;
    let (dp, db) = total_loss_grad(&preds.prominence, &pt, bound, alpha, scales);
    let mut grads = model.store.zero_grads();
    model.backward(input, &cache, &dp, db.as_deref(), &mut grads);
    if !loss.total.is_finite() || !grads.all_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            reason: format!("non-finite loss or gradient (loss = {})", loss.total),
        });
    }
    adam.step(&mut model.store, &grads);
    model.update_running(&cache);
    Ok(loss)
}

/// Trains a fresh model from `spec` with early stopping on `val`.
/// Returns the checkpoint of the best validation epoch.
pub fn train(spec: &ModelSpec, train_set: &[&Utterance], val_set: &[&Utterance], ctx: &DataContext, seg: &SegmentConfig, cfg: &TrainConfig) -> Result<Checkpoint> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::validation("train", problems.join("; ")));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::validation("train", "training and validation sets must be non-empty"));
    }
    let train_spk: BTreeSet<&str> = train_set.iter().map(|u| u.speaker_id.as_str()).collect();
    if let Some(u) = val_set.iter().find(|u| train_spk.contains(u.speaker_id.as_str())) {
        log::warn!("speaker {} appears in both training and validation data", u.speaker_id);
    }
    let mut model = build_model(spec)?;
    let stats = fit_feature_stats(spec, train_set, ctx)?;
    let mut adam = Adam::new(&model.store, cfg.adam_config());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fixed = matches!((spec.loss.scale_prom, spec.loss.scale_bound), (Some(_), Some(_))) || !spec.architecture.has_boundary();
    let mut scales = LossScales {
        prom: spec.loss.scale_prom.unwrap_or(1.0),
        bound: spec.loss.scale_bound.unwrap_or(1.0),
    };
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience, cfg.monitor == Monitor::ValPearson);
    let mut history = Vec::new();
    let mut best_store = model.store.clone();
    let mut order: Vec<&Utterance> = train_set.to_vec();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut words) = (0.0, 0usize);
        let (mut prom_sum, mut bound_sum) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let input = build_input(spec, batch, ctx, &stats)?;
            let loss = train_step(&mut model, &mut adam, &input, batch, scales, &mut rng).map_err(|e| match e {
                Error::Diverged { reason, .. } => Error::Diverged { epoch, reason },
                other => other,
            })?;
            let n = input.num_words();
            loss_sum += loss.total * n as f64;
            prom_sum += loss.prom_mse * n as f64;
            bound_sum += loss.bound_mse.unwrap_or(0.0) * n as f64;
            words += n;
        }
        // The moving averages lag badly when an epoch is only a few steps.
        let calib: Vec<ModelInput> = order
            .chunks(cfg.batch_size)
            .take(MAX_CALIBRATION_BATCHES)
            .map(|b| build_input(spec, b, ctx, &stats))
            .collect::<Result<_>>()?;
        model.calibrate_batchnorm(&calib)?;
        drop(calib);
        if epoch == 1 && !fixed {
            let n = words.max(1) as f64;
            scales = LossScales {
                prom: spec.loss.scale_prom.unwrap_or((prom_sum / n).max(1e-8)),
                bound: spec.loss.scale_bound.unwrap_or((bound_sum / n).max(1e-8)),
            };
            log::debug!("loss scales frozen at {scales:?}");
        }
        let (val_loss, val_r) = evaluate(&model, val_set, ctx, &stats, scales, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite validation loss".into(),
            });
        }
        let train_loss = loss_sum / words.max(1) as f64;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_pearson: val_r,
        });
        let monitored = match cfg.monitor {
            Monitor::ValLoss => val_loss,
            Monitor::ValPearson => val_r.unwrap_or(f64::NEG_INFINITY),
        };
        if stopper.observe(epoch, monitored) {
            best_store = model.store.clone();
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} r {val_r:?}");
        if stopper.should_stop() {
            break;
        }
    }
    Ok(Checkpoint {
        spec: spec.clone(),
        segment: seg.clone(),
        store: best_store,
        feature_stats: stats,
        loss_scales: scales,
        history,
        best_epoch: stopper.best_epoch(),
    })
}

/// CSV of `utterance_id, word_index, token, prominence_score[, boundary_score]`.
pub fn write_word_scores(path: &std::path::Path, utts: &[&Utterance], preds: &Predictions) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["utterance_id", "word_index", "token", "prominence_score"];
    if preds.boundary.is_some() {
        header.push("boundary_score");
    }
    w.write_record(&header)?;
    let mut k = 0;
    for u in utts {
        for word in &u.words {
            let mut rec = vec![
                u.utterance_id.clone(),
                word.word_index.to_string(),
                word.token.clone(),
                format!("{:.6}", preds.prominence[k]),
            ];
            if let Some(b) = &preds.boundary {
                rec.push(format!("{:.6}", b[k]));
            }
            w.write_record(&rec)?;
            k += 1;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_cv_predictions(path: &std::path::Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Word-wise mean of the members' predictions.
pub fn ensemble_predict(checkpoints: &[Checkpoint], utts: &[&Utterance], ctx: &DataContext) -> Result<Predictions> {
    let first = checkpoints
        .first()
        .ok_or_else(|| Error::validation("checkpoints", "ensemble needs at least one model"))?;
    for c in &checkpoints[1..] {
        if !same_architecture(&c.spec, &first.spec) {
            return Err(Error::validation("checkpoints", "ensemble members have different model specs"));
        }
    }
    let mut acc: Option<Predictions> = None;
    for c in checkpoints {
        let p = predict_checkpoint(c, utts, ctx)?;
        acc = Some(match acc {
            None => p,
            Some(mut a) => {
                a.prominence.iter_mut().zip(&p.prominence).for_each(|(x, y)| *x += y);
                if let (Some(ab), Some(pb)) = (&mut a.boundary, &p.boundary) {
                    ab.iter_mut().zip(pb).for_each(|(x, y)| *x += y);
                }
                a
            }
        });
    }
    let mut out = acc.expect("non-empty");
    let k = checkpoints.len() as f64;
    out.prominence.iter_mut().for_each(|x| *x /= k);
    if let Some(b) = &mut out.boundary {
        b.iter_mut().for_each(|x| *x /= k);
    }
    Ok(out)
}

/// Specs equal up to the initialization seed.
pub fn same_architecture(a: &ModelSpec, b: &ModelSpec) -> bool {
    let mut b = b.clone();
    b.init_seed = a.init_seed;
    *a == b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvOptions {
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub fold_seed: u64,
    /// Concurrent inner-fold trainings.
    pub jobs: usize,
    pub keep_predictions: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            outer_folds: 3,
            inner_folds: DEFAULT_INNER_FOLDS,
            fold_seed: 0,
            jobs: 1,
            keep_predictions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub inner_fold: usize,
    pub train_speakers: Vec<String>,
    pub val_speakers: Vec<String>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_loss: f64,
    pub train_seed: u64,
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_speakers: Vec<String>,
    pub n_words: usize,
    pub pearson_r: f64,
    pub boundary_r: Option<f64>,
    pub models: Vec<ModelRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub fold: usize,
    pub utterance_id: String,
    pub word_index: usize,
    pub token: String,
    pub prominence_true: f64,
    pub prominence_score: f64,
    pub boundary_true: f64,
    pub boundary_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub architecture: String,
    pub first_layer: String,
    pub folds: Vec<FoldReport>,
    pub mean_r: f64,
    pub sd_r: f64,
    pub boundary_mean_r: Option<f64>,
    pub config_hash: String,
    pub fold_seed: u64,
    pub train_seed: u64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub predictions: Vec<PredictionRow>,
}

impl CvReport {
    pub fn num_models(&self) -> usize {
        self.folds.iter().map(|f| f.models.len()).sum()
    }

    /// One table row: architecture, first layer, `r mean ± sd`.
    pub fn summary_row(&self) -> String {
        format!(
            "{:<18} | {:<16} | {:.3} ± {:.3}",
            self.architecture, self.first_layer, self.mean_r, self.sd_r
        )
    }

    pub fn summary_header() -> String {
        format!("{:<18} | {:<16} | {}", "architecture", "layer 1", "pearson r (mean ± sd)")
    }
}

/// FNV-1a over the canonical JSON of the run configuration.
pub fn config_hash(spec: &ModelSpec, cfg: &TrainConfig, opts: &CvOptions) -> String {
    let json = serde_json::to_string(&(spec, cfg, opts)).expect("serializable config");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

pub fn first_layer_label(spec: &ModelSpec) -> String {
    let b = &spec.frontend.blocks[0];
    let kind = match spec.frontend.first_layer_kind {
        crate::frontend::FirstLayerKind::Sinc => "Sinc",
        crate::frontend::FirstLayerKind::Standard => "Standard",
    };
    format!("{kind}, {}, {}", b.kernel_width, b.stride)
}

fn speakers_of(utts: &[&Utterance]) -> Vec<String> {
    let s: BTreeSet<String> = utts.iter().map(|u| u.speaker_id.clone()).collect();
    s.into_iter().collect()
}

/// Runs `jobs` closures at a time on scoped threads, preserving order.
fn run_parallel<T: Send>(jobs: usize, tasks: Vec<Box<dyn FnOnce() -> Result<T> + Send + '_>>) -> Result<Vec<T>> {
    if jobs <= 1 {
        return tasks.into_iter().map(|t| t()).collect();
    }
    let mut out = Vec::with_capacity(tasks.len());
    let mut tasks = tasks.into_iter().peekable();
    while tasks.peek().is_some() {
        let wave: Vec<_> = tasks.by_ref().take(jobs).collect();
        let results: Vec<Result<T>> = std::thread::scope(|s| {
            let handles: Vec<_> = wave.into_iter().map(|t| s.spawn(t)).collect();
            handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

/// Outer k-fold speaker-disjoint testing; inside each training split, one
/// model per inner fold (validated on that fold), ensembled on the test fold.
pub fn run_cv(corpus: &Corpus, spec: &ModelSpec, cfg: &TrainConfig, ctx: &DataContext, seg: &SegmentConfig, opts: &CvOptions) -> Result<CvReport> {
    let all = corpus.refs();
    let outer = make_folds(&all, opts.outer_folds, opts.fold_seed)?;
    let mut folds = Vec::with_capacity(opts.outer_folds);
    let mut rows = Vec::new();
    for fold in 0..opts.outer_folds {
        let (test, train_split) = outer.split(&all, fold);
        let inner = inner_folds(&train_split, opts.inner_folds, opts.fold_seed.wrapping_add(fold as u64))?;
        let mut tasks: Vec<Box<dyn FnOnce() -> Result<(ModelRecord, Checkpoint)> + Send + '_>> = Vec::new();
        for j in 0..opts.inner_folds {
            let (val, tr) = inner.split(&train_split, j);
            let train_seed = cfg.seed.wrapping_add((fold * 100 + j) as u64);
            let mut model_spec = spec.clone();
            model_spec.init_seed = spec.init_seed.wrapping_add((fold * opts.inner_folds + j) as u64);
            let mut model_cfg = cfg.clone();
            model_cfg.seed = train_seed;
            tasks.push(Box::new(move || {
                let ckpt = train(&model_spec, &tr, &val, ctx, seg, &model_cfg)?;
                log::info!(
                    "fold {fold} model {j}: best epoch {} of {}",
                    ckpt.best_epoch,
                    ckpt.history.len()
                );
                Ok((
                    ModelRecord {
                        inner_fold: j,
                        train_speakers: speakers_of(&tr),
                        val_speakers: speakers_of(&val),
                        best_epoch: ckpt.best_epoch,
                        epochs_run: ckpt.history.len(),
                        best_val_loss: ckpt.best_val_loss().unwrap_or(f64::NAN),
                        train_seed,
                        init_seed: model_spec.init_seed,
                    },
                    ckpt,
                ))
            }));
        }
        let trained = run_parallel(opts.jobs, tasks)?;
        let (records, ckpts): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
        let preds = ensemble_predict(&ckpts, &test, ctx)?;
        let (pt, bt) = targets(&test);
        let r = pearson(&preds.prominence, &pt)?;
        let br = preds.boundary.as_ref().and_then(|b| pearson(b, &bt).ok());
        if opts.keep_predictions {
            let mut k = 0;
            for u in &test {
                for (i, w) in u.words.iter().enumerate() {
                    rows.push(PredictionRow {
                        fold,
                        utterance_id: u.utterance_id.clone(),
                        word_index: w.word_index,
                        token: w.token.clone(),
                        prominence_true: u.labels[i].prominence_degree,
                        prominence_score: preds.prominence[k],
                        boundary_true: u.labels[i].boundary_degree,
                        boundary_score: preds.boundary.as_ref().map(|b| b[k]),
                    });
                    k += 1;
                }
            }
        }
        log::info!("fold {fold}: r = {r:.4}");
        folds.push(FoldReport {
            fold,
            test_speakers: speakers_of(&test),
            n_words: pt.len(),
            pearson_r: r,
            boundary_r: br,
            models: records,
        });
    }
    let rs: Vec<f64> = folds.iter().map(|f| f.pearson_r).collect();
    let (mean_r, sd_r) = fold_summary(&rs)?;
    let brs: Option<Vec<f64>> = folds.iter().map(|f| f.boundary_r).collect();
    Ok(CvReport {
        architecture: spec.architecture.name().to_string(),
        first_layer: first_layer_label(spec),
        folds,
        mean_r,
        sd_r,
        boundary_mean_r: brs.and_then(|b| fold_summary(&b).ok()).map(|(m, _)| m),
        config_hash: config_hash(spec, cfg, opts),
        fold_seed: opts.fold_seed,
        train_seed: cfg.seed,
        predictions: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_rule() {
        let mut es = EarlyStopping::new(12, false);
        let mut stopped_at = None;
        for epoch in 1..=200 {
            let v = if epoch <= 5 { 1.0 / epoch as f64 } else { 1.0 };
            es.observe(epoch, v);
            if es.should_stop() {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(17));
        assert_eq!(es.best_epoch(), 5);
    }

    #[test]
    fn config_validation() {
        let cfg = TrainConfig {
            learning_rate: -1.0,
            early_stop_patience: 0,
            ..TrainConfig::default()
        };
        let p = cfg.problems();
        assert_eq!(p.len(), 2);
        assert!(TrainConfig::default().problems().is_empty());
    }
}
