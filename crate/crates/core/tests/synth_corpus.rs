use prominence::corpus::{load_manifest, read_manifest_rows, SegmentConfig};
use prominence::synthgen::{generate_corpus, load_oracle, prominence_scores, recompute_votes, SynthConfig, ORACLE_FILE};

fn small() -> SynthConfig {
    SynthConfig {
        num_speakers: 2,
        utterances_per_speaker: 2,
        words_per_utterance_range: (8, 12),
        ..SynthConfig::default()
    }
}

fn seg(cfg: &SynthConfig) -> SegmentConfig {
    SegmentConfig {
        l_max: cfg.required_l_max(),
        ..SegmentConfig::default()
    }
}

#[test]
fn generated_manifest_loads_cleanly() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let out = generate_corpus(&cfg, dir.path()).unwrap();
    let corpus = load_manifest(&out.manifest_path, &seg(&cfg)).unwrap();
    assert_eq!(corpus.utterances.len(), 4);
    assert_eq!(corpus.speakers().len(), 2);
    assert_eq!(corpus.num_words(), out.oracle.words.len());
    for (w, o) in corpus.utterances.iter().flat_map(|u| u.labels.iter()).zip(&out.oracle.words) {
        assert_eq!(w.votes.prominence_votes, o.prominence_votes);
        assert_eq!(w.votes.boundary_votes, o.boundary_votes);
    }
    // The word itself survives segmentation: nonzero right after the pause.
    let u = &corpus.utterances[0];
    let w = &u.words[3];
    let pause = (w.pause_before_ms * 16.0).round() as usize;
    let energy: f32 = w.samples[pause..pause + 200].iter().map(|v| v * v).sum();
    assert!(energy > 0.01);
}

#[test]
fn same_seed_gives_identical_files() {
    let cfg = small();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_corpus(&cfg, a.path()).unwrap();
    generate_corpus(&cfg, b.path()).unwrap();
    for f in ["manifest.jsonl", ORACLE_FILE, "wav/spk01_utt01.wav"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    generate_corpus(&SynthConfig { seed: 99, ..cfg }, c.path()).unwrap();
    assert_ne!(
        std::fs::read(a.path().join("manifest.jsonl")).unwrap(),
        std::fs::read(c.path().join("manifest.jsonl")).unwrap()
    );
}

#[test]
fn oracle_reproduces_labels() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    generate_corpus(&cfg, dir.path()).unwrap();
    let oracle = load_oracle(&dir.path().join(ORACLE_FILE)).unwrap();
    let votes = recompute_votes(&oracle);
    for (w, (p, b)) in oracle.words.iter().zip(votes) {
        assert_eq!((w.prominence_votes, w.boundary_votes), (p, b));
    }
    // Raising any one cue of a word raises its score.
    let d = [60.0, 80.0, 100.0, 120.0];
    let a = [0.2, 0.4, 0.3, 0.5];
    let e = [0.1, 0.0, 0.3, 0.2];
    let base = prominence_scores(&d, &a, &e)[1];
    let mut d2 = d;
    d2[1] = 110.0;
    let mut a2 = a;
    a2[1] = 0.45;
    let mut e2 = e;
    e2[1] = 0.25;
    assert!(prominence_scores(&d2, &a, &e)[1] > base);
    assert!(prominence_scores(&d, &a2, &e)[1] > base);
    assert!(prominence_scores(&d, &a, &e2)[1] > base);
}

#[test]
fn identical_words_get_four_sevenths() {
    let cfg = SynthConfig {
        num_speakers: 1,
        utterances_per_speaker: 1,
        words_per_utterance_range: (5, 5),
        word_duration_ms_range: (80.0, 80.0),
        amplitude_range: (0.3, 0.3),
        f0_excursion_range: (0.2, 0.2),
        ..SynthConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let out = generate_corpus(&cfg, dir.path()).unwrap();
    assert!(out.oracle.words.iter().all(|w| w.prominence_score == 0.5 && w.prominence_votes == 4));
}

#[test]
fn row_count_matches_configuration() {
    let cfg = SynthConfig {
        num_speakers: 6,
        utterances_per_speaker: 5,
        words_per_utterance_range: (60, 60),
        word_duration_ms_range: (20.0, 20.0),
        pause_ms_range: (0.0, 5.0),
        ..SynthConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let out = generate_corpus(&cfg, dir.path()).unwrap();
    assert_eq!(read_manifest_rows(&out.manifest_path).unwrap().len(), 1800);
}

#[test]
fn unwritable_output_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, b"x").unwrap();
    assert!(generate_corpus(&small(), &file.join("sub")).is_err());
}
