// Speaker-disjoint fold planning and the evaluation metric.
//
//     cargo run --example speaker_folds

use prominence::corpus::{aggregate_votes, inner_folds, load_manifest, make_folds, RaterVotes};
use prominence::evalkit::{fold_summary, pearson};
use prominence::presets::desk_segment;
use prominence::synthgen::{generate_corpus, SynthConfig};

pub fn run_example() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let out = generate_corpus(&SynthConfig::default(), dir.path())?;
    let corpus = load_manifest(&out.manifest_path, &desk_segment())?;
    let utts = corpus.refs();

    let outer = make_folds(&utts, 3, 0)?;
    println!("outer folds, words per fold {:?}, max/min {:.3}", outer.fold_words, outer.balance_ratio());
    for f in 0..3 {
        let (test, train) = outer.split(&utts, f);
        let inner = inner_folds(&train, 4, f as u64)?;
        println!(
            "  fold {f}: test speakers {:?} ({} utterances); inner folds {:?}",
            outer.speakers_in(f),
            test.len(),
            (0..4).map(|j| inner.speakers_in(j)).collect::<Vec<_>>()
        );
    }

    let votes: Vec<String> = (0..=7)
        .map(|v| aggregate_votes(RaterVotes::new(v, 0)).map(|l| format!("{v}->{:.3}", l.prominence_degree)))
        .collect::<Result<_, _>>()?;
    println!("\nvotes to degrees: {}", votes.join(" "));
    let r = pearson(&[1.0, 2.0, 3.0, 5.0], &[2.0, 4.0, 6.0, 8.0])?;
    println!("pearson([1,2,3,5], [2,4,6,8]) = {r:.6}");
    let (m, s) = fold_summary(&[0.71, 0.74, 0.69])?;
    println!("three folds -> {m:.3} ± {s:.3}");
    println!("constant prediction -> {}", pearson(&[0.5; 4], &[0.0, 1.0, 0.0, 1.0]).unwrap_err());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
