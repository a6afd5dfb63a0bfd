mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{fake_utterance, tiny_spec};
use proptest::prelude::*;
use prominence::checkpoint::Checkpoint;
use prominence::corpus::{make_folds, SegmentConfig, Utterance};
use prominence::mtl::{build_model, ArchitectureVariant};
use prominence::trainer::{ensemble_predict, predict_checkpoint, run_cv, train, CvOptions, DataContext, TrainConfig};
use prominence::Error;

fn corpus_of(sizes: &[Vec<usize>]) -> Vec<Utterance> {
    let mut out = Vec::new();
    for (s, utts) in sizes.iter().enumerate() {
        for (u, &n) in utts.iter().enumerate() {
            out.push(fake_utterance(&format!("s{s}u{u}"), &format!("s{s}"), n, (s * 100 + u) as u64));
        }
    }
    out
}

fn light_corpus(sizes: &[Vec<usize>]) -> Vec<Utterance> {
    // Audio is irrelevant to fold planning; keep it tiny.
    let mut c = corpus_of(sizes);
    for u in &mut c {
        for w in &mut u.words {
            w.samples.truncate(1);
        }
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_are_speaker_disjoint_and_cover_everything(
        sizes in prop::collection::vec(prop::collection::vec(1usize..80, 1..6), 3..10),
        k in 2usize..4,
        seed in 0u64..1000,
    ) {
        prop_assume!(sizes.len() >= k);
        let corpus = light_corpus(&sizes);
        let refs: Vec<&Utterance> = corpus.iter().collect();
        let plan = make_folds(&refs, k, seed).unwrap();
        prop_assert_eq!(plan.assignments.len(), corpus.len());
        let mut spk_fold: BTreeMap<&str, usize> = BTreeMap::new();
        for u in &corpus {
            let f = plan.fold_of(&u.utterance_id).unwrap();
            prop_assert!(f < k);
            let prev = *spk_fold.entry(u.speaker_id.as_str()).or_insert(f);
            prop_assert_eq!(prev, f);
        }
        for f in 0..k {
            prop_assert!(!plan.speakers_in(f).is_empty());
            let (inside, rest) = plan.split(&refs, f);
            prop_assert_eq!(inside.len() + rest.len(), corpus.len());
            let a: BTreeSet<_> = inside.iter().map(|u| &u.speaker_id).collect();
            prop_assert!(rest.iter().all(|u| !a.contains(&u.speaker_id)));
        }
        let words: usize = plan.fold_words.iter().sum();
        prop_assert_eq!(words, corpus.iter().map(|u| u.len()).sum::<usize>());
        // Same seed, same plan.
        prop_assert_eq!(make_folds(&refs, k, seed).unwrap(), plan);
    }
}

#[test]
fn balanced_speakers_give_balanced_folds() {
    let sizes: Vec<Vec<usize>> = (0..6).map(|s| (0..8).map(|u| 50 + (s * 7 + u * 3) % 21).collect()).collect();
    let corpus = light_corpus(&sizes);
    let refs: Vec<&Utterance> = corpus.iter().collect();
    for seed in 0..10 {
        let plan = make_folds(&refs, 3, seed).unwrap();
        assert!(plan.balance_ratio() <= 1.3, "seed {seed}: {:?}", plan.fold_words);
    }
}

#[test]
fn too_few_speakers_is_an_error() {
    let corpus = light_corpus(&[vec![10], vec![10]]);
    let refs: Vec<&Utterance> = corpus.iter().collect();
    assert!(matches!(make_folds(&refs, 3, 0), Err(Error::TooFewSpeakers { .. })));
}

fn tiny_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        max_epochs: epochs,
        early_stop_patience: 3,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    }
}

fn seg() -> SegmentConfig {
    SegmentConfig {
        l_max: common::TINY_LEN,
        ..SegmentConfig::default()
    }
}

#[test]
fn checkpoint_round_trip_and_ensemble_of_copies() {
    let corpus = corpus_of(&[vec![6, 5], vec![4], vec![5]]);
    let refs: Vec<&Utterance> = corpus.iter().collect();
    let spec = tiny_spec(ArchitectureVariant::CondB);
    let ctx = DataContext::default();
    let ckpt = train(&spec, &refs[..3], &refs[3..], &ctx, &seg(), &tiny_train_config(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.best_epoch, ckpt.best_epoch);
    assert_eq!(back.history, ckpt.history);
    for ((_, a), (_, b)) in ckpt.store.iter().zip(back.store.iter()) {
        assert_eq!(a.name, b.name);
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| (x - y).abs() <= 1e-6));
    }
    let single = predict_checkpoint(&ckpt, &refs, &ctx).unwrap();
    let loaded = predict_checkpoint(&back, &refs, &ctx).unwrap();
    assert!(single.prominence.iter().zip(&loaded.prominence).all(|(a, b)| (a - b).abs() <= 1e-6));

    let ens = ensemble_predict(&[ckpt.clone(), back.clone(), ckpt.clone()], &refs, &ctx).unwrap();
    for (a, b) in ens.prominence.iter().zip(&single.prominence) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in ens.boundary.unwrap().iter().zip(single.boundary.as_ref().unwrap()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn ensemble_rejects_mixed_architectures() {
    let corpus = corpus_of(&[vec![3], vec![3]]);
    let refs: Vec<&Utterance> = corpus.iter().collect();
    let ctx = DataContext::default();
    let a = train(&tiny_spec(ArchitectureVariant::Single), &refs[..1], &refs[1..], &ctx, &seg(), &tiny_train_config(1)).unwrap();
    let b = train(&tiny_spec(ArchitectureVariant::CondA), &refs[..1], &refs[1..], &ctx, &seg(), &tiny_train_config(1)).unwrap();
    assert!(ensemble_predict(&[a, b], &refs, &ctx).is_err());
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, b"not a checkpoint at all").unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    let model = build_model(&tiny_spec(ArchitectureVariant::Single)).unwrap();
    assert!(model.num_trainable() > 0);
}

#[test]
fn nested_cv_trains_outer_times_inner_models() {
    let sizes: Vec<Vec<usize>> = (0..6).map(|s| vec![4 + s % 2, 5]).collect();
    let corpus = prominence::corpus::Corpus { utterances: corpus_of(&sizes) };
    let spec = tiny_spec(ArchitectureVariant::Single);
    let opts = CvOptions {
        outer_folds: 3,
        inner_folds: 4,
        fold_seed: 3,
        jobs: 2,
        keep_predictions: true,
    };
    let report = run_cv(&corpus, &spec, &tiny_train_config(1), &DataContext::default(), &seg(), &opts).unwrap();
    assert_eq!(report.folds.len(), 3);
    assert_eq!(report.num_models(), 12);
    assert_eq!(report.predictions.len(), corpus.num_words());
    for f in &report.folds {
        for m in &f.models {
            assert!(m.val_speakers.iter().all(|s| !m.train_speakers.contains(s)));
            assert!(m.train_speakers.iter().chain(&m.val_speakers).all(|s| !f.test_speakers.contains(s)));
        }
    }
    let seeds: BTreeSet<u64> = report.folds.iter().flat_map(|f| f.models.iter().map(|m| m.init_seed)).collect();
    assert_eq!(seeds.len(), 12);
    assert!(report.summary_row().starts_with("SINGLE"));
    assert!(report.summary_row().contains("Sinc, 31, 2"));
}
