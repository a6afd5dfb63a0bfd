// Synthesize a small corpus, train one SINGLE sinc model on four speakers,
// validate on a fifth, and score the held-out sixth.
//
//     cargo run --release --example train_single [epochs]

use std::time::Instant;

use prominence::corpus::load_manifest;
use prominence::evalkit::pearson;
use prominence::mtl::ArchitectureVariant;
use prominence::presets::{desk_model, desk_segment, desk_train};
use prominence::synthgen::{generate_corpus, SynthConfig};
use prominence::trainer::{predict_checkpoint, train, DataContext};

pub fn run_example() -> anyhow::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let dir = tempfile::tempdir()?;
    let out = generate_corpus(&SynthConfig::default(), dir.path())?;
    let seg = desk_segment();
    let corpus = load_manifest(&out.manifest_path, &seg)?;
    println!("{} utterances, {} words", corpus.utterances.len(), corpus.num_words());

    let by_speaker = |s: &str| corpus.utterances.iter().filter(|u| u.speaker_id == s).collect::<Vec<_>>();
    let speakers = corpus.speakers();
    let train_set: Vec<_> = speakers[..4].iter().flat_map(|s| by_speaker(s)).collect();
    let val = by_speaker(&speakers[4]);
    let test = by_speaker(&speakers[5]);

    let spec = desk_model(ArchitectureVariant::Single);
    let mut cfg = desk_train();
    cfg.max_epochs = epochs;
    let ctx = DataContext::for_spec(&spec, &corpus, &seg)?;
    let t = Instant::now();
    let ckpt = train(&spec, &train_set, &val, &ctx, &seg, &cfg)?;
    println!("trained {} epochs in {:.1}s, best epoch {}", ckpt.history.len(), t.elapsed().as_secs_f64(), ckpt.best_epoch);
    for r in &ckpt.history {
        println!("epoch {:3}  train {:.4}  val {:.4}  r {:?}", r.epoch, r.train_loss, r.val_loss, r.val_pearson);
    }
    let preds = predict_checkpoint(&ckpt, &test, &ctx)?;
    let truth: Vec<f64> = test.iter().flat_map(|u| u.prominence()).collect();
    println!("held-out speaker r = {:.3}", pearson(&preds.prominence, &truth)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run_example()
}
