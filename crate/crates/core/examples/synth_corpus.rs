// Generate a synthetic corpus and check the planted labels against the oracle.
//
//     cargo run --release --example synth_corpus [OUT_DIR]

use prominence::corpus::load_manifest;
use prominence::presets::desk_segment;
use prominence::synthgen::{generate_corpus, recompute_votes, SynthConfig};

pub fn run_example() -> anyhow::Result<()> {
    let tmp = tempfile::tempdir()?;
    let out_dir = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());
    let cfg = SynthConfig {
        num_speakers: 3,
        utterances_per_speaker: 2,
        ..SynthConfig::default()
    };
    let out = generate_corpus(&cfg, &out_dir)?;
    println!("rule: {}", out.oracle.rule);

    let corpus = load_manifest(&out.manifest_path, &desk_segment())?;
    println!(
        "{} speakers, {} utterances, {} words; segments of {} samples",
        corpus.speakers().len(),
        corpus.utterances.len(),
        corpus.num_words(),
        desk_segment().l_max
    );

    let votes = recompute_votes(&out.oracle);
    let agree = out
        .oracle
        .words
        .iter()
        .zip(&votes)
        .filter(|(w, v)| (w.prominence_votes, w.boundary_votes) == **v)
        .count();
    println!("oracle reproduces {agree}/{} labels", votes.len());
    anyhow::ensure!(agree == votes.len());

    println!("\nfirst utterance:");
    println!("{:>4} {:>8} {:>6} {:>6} {:>7} {:>5} {:>5}", "word", "dur ms", "amp", "exc", "pause", "prom", "bound");
    for w in out.oracle.words.iter().take(10) {
        println!(
            "{:>4} {:>8.1} {:>6.3} {:>6.3} {:>7.1} {:>3}/7 {:>3}/7",
            w.word_index, w.duration_ms, w.amplitude, w.f0_excursion, w.pause_after_ms, w.prominence_votes, w.boundary_votes
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
