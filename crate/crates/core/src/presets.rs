//! Reduced configurations that train on one CPU core in minutes.
//!
//! The full-size defaults (28,660-sample segments, 256-unit 3-layer GRU)
//! stay the library defaults; these presets pair with the default
//! [`SynthConfig`](crate::synthgen::SynthConfig), whose longest pause plus
//! longest word fits in [`DESK_L_MAX`] samples.

use crate::corpus::SegmentConfig;
use crate::frontend::{ConvBlockSpec, FirstLayerKind, FrontendSpec};
use crate::mtl::{ArchitectureVariant, ModelSpec};
use crate::seqmodel::SequenceHeadSpec;
use crate::trainer::{CvOptions, TrainConfig};

pub const DESK_L_MAX: usize = 3072;

pub fn desk_segment() -> SegmentConfig {
    SegmentConfig {
        l_max: DESK_L_MAX,
        ..SegmentConfig::default()
    }
}

/// First layer of the given kind (width 31, stride 2) and three smaller blocks
/// with wider pooling, so the last layer sees about 120 ms.
pub fn desk_frontend(kind: FirstLayerKind) -> FrontendSpec {
    FrontendSpec {
        first_layer_kind: kind,
        blocks: vec![
            ConvBlockSpec::new(16, 31, 2, 4),
            ConvBlockSpec::new(16, 11, 1, 4),
            ConvBlockSpec::new(16, 11, 1, 4),
            ConvBlockSpec::new(32, 11, 1, 3),
        ],
        ..FrontendSpec::default()
    }
}

pub fn desk_head() -> SequenceHeadSpec {
    SequenceHeadSpec {
        gru_layers: 2,
        gru_hidden: 32,
        bidirectional: true,
        inter_layer_dropout: 0.1,
        fc1_dim: 32,
        fc1_dropout: 0.1,
    }
}

pub fn desk_model(architecture: ArchitectureVariant) -> ModelSpec {
    ModelSpec {
        architecture,
        frontend: desk_frontend(FirstLayerKind::Sinc),
        head: desk_head(),
        ..ModelSpec::default()
    }
}

pub fn desk_train() -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        batch_size: 4,
        max_epochs: 40,
        early_stop_patience: 6,
        ..TrainConfig::default()
    }
}

pub fn desk_cv() -> CvOptions {
    CvOptions::default()
}
