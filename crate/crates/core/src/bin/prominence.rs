use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prominence::checkpoint::Checkpoint;
use prominence::config::{data_context, DataConfig, RunConfig};
use prominence::corpus::{inner_folds, load_manifest};
use prominence::evalkit::pearson;
use prominence::frontend::filter_table;
use prominence::mtl::ArchitectureVariant;
use prominence::synthgen::generate_corpus;
use prominence::trainer::{
    ensemble_predict, first_layer_label, run_cv, train, write_cv_predictions, write_word_scores, CvReport,
};
use prominence::Error;

#[derive(Parser)]
#[command(name = "prominence", version, about = "Word prominence from speech with sinc-constrained CRNNs")]
struct Cli {
    /// Log level (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus with planted labels.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model with a speaker-disjoint validation split.
    Train(RunArgs),
    /// Nested speaker-independent cross-validation with ensembling.
    Cv(RunArgs),
    /// Score every word of a manifest; several checkpoints are averaged.
    Predict {
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        prominence_features: Option<PathBuf>,
        #[arg(long)]
        boundary_features: Option<PathBuf>,
    },
    /// Dump sinc cutoffs and magnitude responses.
    InspectFilters {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Earlier checkpoint (e.g. untrained) to compare against.
        #[arg(long)]
        before: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        points: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    arch: Option<ArchitectureVariant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    jobs: Option<usize>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    if !args.config.is_file() {
        return Err(Failure::Usage(format!("config file {} not found", args.config.display())));
    }
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(v) = &args.run_dir {
        cfg.run_dir = Some(v.clone());
    }
    if let Some(v) = &args.manifest {
        cfg.data.manifest = Some(v.clone());
    }
    if let Some(v) = args.arch {
        cfg.model.architecture = v;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
        cfg.cv.fold_seed = v;
        cfg.model.init_seed = v;
    }
    if let Some(v) = args.epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = args.alpha {
        cfg.model.loss.alpha = v;
    }
    if let Some(v) = args.jobs {
        cfg.cv.jobs = v;
    }
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Failure::Usage(format!("invalid configuration:\n  {}", problems.join("\n  "))));
    }
    let manifest = cfg.manifest()?;
    if !manifest.is_file() {
        return Err(Failure::Usage(format!("manifest {} not found", manifest.display())));
    }
    Ok(cfg)
}

fn prepare_run_dir(cfg: &RunConfig, command: &str) -> Result<PathBuf, Failure> {
    let dir = cfg
        .run_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{command}-{}", cfg.model.architecture.name().to_lowercase())));
    fs::create_dir_all(&dir).map_err(|e| Failure::Usage(format!("cannot create run directory {}: {e}", dir.display())))?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string()?).map_err(runtime)?;
    Ok(dir)
}

fn cmd_synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Outcome {
    let mut cfg = match config {
        Some(p) if !p.is_file() => return Err(Failure::Usage(format!("config file {} not found", p.display()))),
        Some(p) => RunConfig::load(p)?.synth,
        None => Default::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    fs::create_dir_all(out).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", out.display())))?;
    let result = generate_corpus(&cfg, out)?;
    let words = result.oracle.words.len();
    println!(
        "wrote {} speakers x {} utterances, {words} words to {}",
        cfg.num_speakers,
        cfg.utterances_per_speaker,
        out.display()
    );
    println!("manifest: {}", result.manifest_path.display());
    println!("segments need l_max >= {} samples", cfg.required_l_max());
    Ok(())
}

fn cmd_train(args: &RunArgs) -> Outcome {
    let cfg = load_config(args)?;
    let corpus = load_manifest(cfg.manifest()?, &cfg.segment)?;
    let dir = prepare_run_dir(&cfg, "train")?;
    let ctx = cfg.data_context(&corpus)?;
    let all = corpus.refs();
    let plan = inner_folds(&all, cfg.cv.inner_folds, cfg.cv.fold_seed)?;
    let (val, tr) = plan.split(&all, 0);
    log::info!("training on {} utterances, validating on {}", tr.len(), val.len());
    let ckpt = train(&cfg.model, &tr, &val, &ctx, &cfg.segment, &cfg.train)?;
    ckpt.save(&dir.join("model.ckpt"))?;
    fs::write(dir.join("history.json"), serde_json::to_vec_pretty(&ckpt.history).map_err(runtime)?).map_err(runtime)?;
    let best = ckpt.history.iter().find(|h| h.epoch == ckpt.best_epoch);
    println!("{:<18} | {:<16} | best epoch | val loss | val r", "architecture", "layer 1");
    println!(
        "{:<18} | {:<16} | {:>10} | {:>8.4} | {}",
        cfg.model.architecture.name(),
        first_layer_label(&cfg.model),
        ckpt.best_epoch,
        best.map_or(f64::NAN, |b| b.val_loss),
        best.and_then(|b| b.val_pearson).map_or("n/a".into(), |r| format!("{r:.3}"))
    );
    println!("checkpoint: {}", dir.join("model.ckpt").display());
    Ok(())
}

fn cmd_cv(args: &RunArgs) -> Outcome {
    let cfg = load_config(args)?;
    let corpus = load_manifest(cfg.manifest()?, &cfg.segment)?;
    let dir = prepare_run_dir(&cfg, "cv")?;
    let ctx = cfg.data_context(&corpus)?;
    let report = run_cv(&corpus, &cfg.model, &cfg.train, &ctx, &cfg.segment, &cfg.cv)?;
    if !report.predictions.is_empty() {
        write_cv_predictions(&dir.join("predictions.csv"), &report.predictions)?;
    }
    let mut slim = report.clone();
    slim.predictions.clear();
    fs::write(dir.join("cv_report.json"), serde_json::to_vec_pretty(&slim).map_err(runtime)?).map_err(runtime)?;
    let table = format!("{}\n{}\n", CvReport::summary_header(), report.summary_row());
    fs::write(dir.join("summary.txt"), &table).map_err(runtime)?;
    for f in &report.folds {
        println!("fold {}: r = {:.3} ({} words, speakers {})", f.fold, f.pearson_r, f.n_words, f.test_speakers.join(","));
    }
    print!("{table}");
    Ok(())
}

fn cmd_predict(checkpoints: &[PathBuf], manifest: &Path, out: &Path, data: DataConfig) -> Outcome {
    for p in checkpoints {
        if !p.is_file() {
            return Err(Failure::Usage(format!("checkpoint {} not found", p.display())));
        }
    }
    if !manifest.is_file() {
        return Err(Failure::Usage(format!("manifest {} not found", manifest.display())));
    }
    let ckpts = checkpoints.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>, _>>()?;
    let corpus = load_manifest(manifest, &ckpts[0].segment)?;
    let ctx = data_context(&ckpts[0].spec, &data, &corpus, &ckpts[0].segment)?;
    let utts = corpus.refs();
    let preds = ensemble_predict(&ckpts, &utts, &ctx)?;
    write_word_scores(out, &utts, &preds)?;
    if let Ok(r) = pearson(&preds.prominence, &utts.iter().flat_map(|u| u.prominence()).collect::<Vec<_>>()) {
        println!("pearson r against manifest labels: {r:.3}");
    }
    println!("wrote {} word scores to {}", preds.prominence.len(), out.display());
    Ok(())
}

fn cmd_inspect(checkpoint: &Path, before: Option<&Path>, out: &Path, points: usize) -> Outcome {
    let table = |p: &Path| -> Result<_, Failure> {
        if !p.is_file() {
            return Err(Failure::Usage(format!("checkpoint {} not found", p.display())));
        }
        let ckpt = Checkpoint::load(p)?;
        let model = ckpt.model()?;
        let sinc = model.frontends[0].sinc_layer().ok_or(Error::NoSincLayer)?;
        let sr = ckpt.spec.frontend.sample_rate_hz;
        let n = points.max(2);
        let freqs: Vec<f64> = (0..n).map(|i| i as f64 * sr as f64 / 2.0 / (n - 1) as f64).collect();
        Ok((filter_table(&sinc.params(&model.store), sr, &freqs), freqs))
    };
    let (after, freqs) = table(checkpoint)?;
    let before = before.map(table).transpose()?.map(|(t, _)| t);
    let mut w = csv::Writer::from_path(out).map_err(runtime)?;
    let mut header = vec!["filter".to_string(), "f1_hz".into(), "f2_hz".into()];
    if before.is_some() {
        header.extend(["f1_hz_before".into(), "f2_hz_before".into()]);
    }
    header.extend(freqs.iter().map(|f| format!("mag_{f:.0}hz")));
    w.write_record(&header).map_err(runtime)?;
    for (i, row) in after.iter().enumerate() {
        let mut rec = vec![row.index.to_string(), format!("{:.2}", row.f1_hz), format!("{:.2}", row.f2_hz)];
        if let Some(b) = &before {
            let prev = b.get(i).ok_or_else(|| runtime("checkpoints have different filter counts"))?;
            rec.extend([format!("{:.2}", prev.f1_hz), format!("{:.2}", prev.f2_hz)]);
        }
        rec.extend(row.response.iter().map(|m| format!("{m:.6}")));
        w.write_record(&rec).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    println!("wrote {} filters to {}", after.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    let outcome = match &cli.cmd {
        Cmd::Synth { config, out, seed } => cmd_synth(config.as_deref(), out, *seed),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Cv(a) => cmd_cv(a),
        Cmd::Predict {
            checkpoint,
            manifest,
            out,
            prominence_features,
            boundary_features,
        } => cmd_predict(
            checkpoint,
            manifest,
            out,
            DataConfig {
                manifest: None,
                prominence_features: prominence_features.clone(),
                boundary_features: boundary_features.clone(),
            },
        ),
        Cmd::InspectFilters {
            checkpoint,
            before,
            out,
            points,
        } => cmd_inspect(checkpoint, before.as_deref(), out, *points),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
