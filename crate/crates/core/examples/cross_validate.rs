// Nested speaker-independent cross-validation on a synthetic corpus:
// 3 outer test folds, 4 inner models per fold, ensembled on the test fold.
//
//     cargo run --release --example cross_validate [ARCH ...] [--jobs N]
//
// ARCH is one of SINGLE, SHARED_CNN_HEADS, COND_A, COND_B, COND_SHARED_SINC.

use std::time::Instant;

use prominence::corpus::load_manifest;
use prominence::mtl::ArchitectureVariant;
use prominence::presets::{desk_cv, desk_model, desk_segment, desk_train};
use prominence::synthgen::{generate_corpus, SynthConfig};
use prominence::trainer::{run_cv, CvReport, DataContext};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut archs = Vec::new();
    let mut opts = desk_cv();
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        if a == "--jobs" {
            opts.jobs = args.next().and_then(|j| j.parse().ok()).unwrap_or(1);
        } else {
            archs.push(a.parse::<ArchitectureVariant>()?);
        }
    }
    if archs.is_empty() {
        archs.push(ArchitectureVariant::Single);
    }

    let dir = tempfile::tempdir()?;
    let out = generate_corpus(&SynthConfig::default(), dir.path())?;
    let seg = desk_segment();
    let corpus = load_manifest(&out.manifest_path, &seg)?;
    println!("{} speakers, {} utterances, {} words", corpus.speakers().len(), corpus.utterances.len(), corpus.num_words());

    let mut rows = Vec::new();
    for arch in archs {
        let spec = desk_model(arch);
        let ctx = DataContext::for_spec(&spec, &corpus, &seg)?;
        let t = Instant::now();
        let report = run_cv(&corpus, &spec, &desk_train(), &ctx, &seg, &opts)?;
        for f in &report.folds {
            println!("  {arch} fold {}: r = {:.3} on {} words ({:?})", f.fold, f.pearson_r, f.n_words, f.test_speakers);
        }
        println!("  {arch}: {} models in {:.0}s", report.num_models(), t.elapsed().as_secs_f64());
        rows.push(report.summary_row());
    }
    println!("{}", CvReport::summary_header());
    rows.iter().for_each(|r| println!("{r}"));
    Ok(())
}
