// Train two small models on different speakers, save them, reload the
// checkpoints and average their word scores.
//
//     cargo run --release --example predict_ensemble

use prominence::checkpoint::Checkpoint;
use prominence::corpus::load_manifest;
use prominence::evalkit::pearson;
use prominence::mtl::ArchitectureVariant;
use prominence::presets::{desk_model, desk_segment, desk_train};
use prominence::synthgen::{generate_corpus, SynthConfig};
use prominence::trainer::{ensemble_predict, predict_checkpoint, train, write_word_scores, DataContext, TrainConfig};

pub fn run_example() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let cfg = SynthConfig {
        num_speakers: 3,
        utterances_per_speaker: 2,
        words_per_utterance_range: (20, 25),
        ..SynthConfig::default()
    };
    let out = generate_corpus(&cfg, dir.path())?;
    let seg = desk_segment();
    let corpus = load_manifest(&out.manifest_path, &seg)?;
    let of = |s: &str| corpus.utterances.iter().filter(|u| u.speaker_id == s).collect::<Vec<_>>();
    let (a, b, test) = (of("spk00"), of("spk01"), of("spk02"));

    let spec = desk_model(ArchitectureVariant::CondB);
    let tc = TrainConfig {
        max_epochs: 3,
        ..desk_train()
    };
    let ctx = DataContext::default();
    let mut paths = Vec::new();
    for (i, (tr, val)) in [(&a, &b), (&b, &a)].into_iter().enumerate() {
        let mut s = spec.clone();
        s.init_seed = i as u64;
        let ckpt = train(&s, tr, val, &ctx, &seg, &tc)?;
        let p = dir.path().join(format!("model{i}.ckpt"));
        ckpt.save(&p)?;
        println!("model {i}: best epoch {} of {}", ckpt.best_epoch, ckpt.history.len());
        paths.push(p);
    }

    let ckpts = paths.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>, _>>()?;
    let truth: Vec<f64> = test.iter().flat_map(|u| u.prominence()).collect();
    for (i, c) in ckpts.iter().enumerate() {
        let p = predict_checkpoint(c, &test, &ctx)?;
        println!("model {i} on held-out speaker: r = {:.3}", pearson(&p.prominence, &truth).unwrap_or(f64::NAN));
    }
    let ens = ensemble_predict(&ckpts, &test, &ctx)?;
    println!("ensemble: r = {:.3}", pearson(&ens.prominence, &truth).unwrap_or(f64::NAN));
    let csv = dir.path().join("scores.csv");
    write_word_scores(&csv, &test, &ens)?;
    let text = std::fs::read_to_string(&csv)?;
    for line in text.lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
