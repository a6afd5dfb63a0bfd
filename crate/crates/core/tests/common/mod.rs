#![allow(dead_code)]

use ndarray::Array2;
use prominence::corpus::{ProsodyLabels, RaterVotes, Utterance, WordSegment};
use prominence::frontend::{ConvBlockSpec, FirstLayerKind, FrontendSpec};
use prominence::mtl::{ArchitectureVariant, ModelInput, ModelSpec};
use prominence::seqmodel::SequenceHeadSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TINY_LEN: usize = 400;

pub fn tiny_frontend(kind: FirstLayerKind) -> FrontendSpec {
    FrontendSpec {
        first_layer_kind: kind,
        blocks: vec![
            ConvBlockSpec::new(4, 31, 2, 3),
            ConvBlockSpec::new(4, 5, 1, 3),
            ConvBlockSpec::new(6, 5, 1, 2),
        ],
        ..FrontendSpec::default()
    }
}

pub fn tiny_spec(arch: ArchitectureVariant) -> ModelSpec {
    ModelSpec {
        architecture: arch,
        frontend: tiny_frontend(FirstLayerKind::Sinc),
        head: SequenceHeadSpec {
            gru_layers: 2,
            gru_hidden: 3,
            bidirectional: true,
            inter_layer_dropout: 0.0,
            fc1_dim: 4,
            fc1_dropout: 0.0,
        },
        init_seed: 11,
        ..ModelSpec::default()
    }
}

pub fn random_segment(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let f = rng.random_range(0.01..0.2);
    let a = rng.random_range(0.1..0.8);
    (0..len)
        .map(|t| a * (f * t as f64).sin() + 0.05 * rng.random_range(-1.0..1.0))
        .collect()
}

/// Random batch with `lengths[u]` words in utterance `u`.
pub fn random_input(spec: &ModelSpec, lengths: &[usize], seed: u64) -> ModelInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = lengths.iter().sum();
    let mut input = ModelInput {
        segments: (0..n).map(|_| random_segment(&mut rng, TINY_LEN)).collect(),
        lengths: lengths.to_vec(),
        ..ModelInput::default()
    };
    let mut mat = |d: usize| Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    if spec.fusion.use_acoustic_features {
        input.prom_features = Some(mat(spec.fusion.prominence_feature_dim));
        if spec.architecture.has_boundary() {
            input.bound_features = Some(mat(spec.fusion.boundary_feature_dim));
        }
    }
    if spec.fusion.use_lexical {
        input.lexical = Some(mat(spec.fusion.lexical.embedding_dim));
    }
    input
}

pub fn random_targets(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..=7) as f64 / 7.0).collect()
}

/// In-memory utterance with random audio and labels.
pub fn fake_utterance(id: &str, speaker: &str, words: usize, seed: u64) -> Utterance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws = Vec::with_capacity(words);
    let mut labels = Vec::with_capacity(words);
    for i in 0..words {
        ws.push(WordSegment {
            samples: random_segment(&mut rng, TINY_LEN).into_iter().map(|v| v as f32).collect(),
            token: format!("w{i}"),
            word_index: i,
            pause_before_ms: 0.0,
            start_s: i as f64 * 0.1,
            end_s: i as f64 * 0.1 + 0.05,
        });
        let p = rng.random_range(0..=7);
        let b = rng.random_range(0..=7);
        labels.push(ProsodyLabels {
            prominence_degree: p as f64 / 7.0,
            boundary_degree: b as f64 / 7.0,
            votes: RaterVotes::new(p, b),
        });
    }
    Utterance {
        utterance_id: id.into(),
        speaker_id: speaker.into(),
        words: ws,
        labels,
    }
}
