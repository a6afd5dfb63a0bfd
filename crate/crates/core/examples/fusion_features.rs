// Word-level acoustic features and lexical vectors fused with the CNN
// embedding before the recurrent layers.
//
//     cargo run --example fusion_features

use prominence::corpus::load_manifest;
use prominence::fusion::{synthetic_acoustic_features, Lexicon, Standardizer, BOUNDARY_FEATURE_DIM, PROMINENCE_FEATURE_DIM};
use prominence::mtl::{build_model, ArchitectureVariant, ModelSpec};
use prominence::presets::desk_segment;
use prominence::synthgen::{generate_corpus, SynthConfig};

pub fn run_example() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let cfg = SynthConfig {
        num_speakers: 1,
        utterances_per_speaker: 1,
        words_per_utterance_range: (12, 12),
        ..SynthConfig::default()
    };
    let out = generate_corpus(&cfg, dir.path())?;
    let seg = desk_segment();
    let corpus = load_manifest(&out.manifest_path, &seg)?;
    let utt = &corpus.utterances[0];

    let mut feats = synthetic_acoustic_features(utt, &seg);
    println!("acoustic features: {:?} (first {BOUNDARY_FEATURE_DIM} columns form the boundary set)", feats.dim());
    let stats = Standardizer::fit(feats.view());
    stats.apply(&mut feats);
    println!("duration column after standardizing: {:.2?}", feats.column(0).to_vec());
    let oracle_d: Vec<f64> = out.oracle.words.iter().map(|w| w.duration_ms).collect();
    println!("planted durations (ms):              {oracle_d:.0?}");

    let lex = Lexicon::from_pairs(3, [("kalo".to_string(), vec![1.0, 0.0, 0.5])]);
    println!("lexicon lookup 'KaLo,' -> {:?}; unknown -> {:?}", lex.lookup("KaLo,"), lex.lookup("zzz"));

    println!("\nGRU input width per configuration:");
    for (name, acoustic, lexical) in [("cnn only", false, false), ("+ acoustic", true, false), ("+ acoustic + lexical", true, true)] {
        let mut spec = ModelSpec {
            architecture: ArchitectureVariant::Single,
            ..ModelSpec::default()
        };
        spec.fusion.use_acoustic_features = acoustic;
        spec.fusion.use_lexical = lexical;
        let model = build_model(&spec)?;
        println!("  {name:<22} {}", model.prominence.input_dim());
    }
    println!("(acoustic set: {PROMINENCE_FEATURE_DIM} dims; lexical projection: 300 dims)");
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
