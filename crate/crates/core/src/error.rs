use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("manifest row {row}: {reason}")]
    Manifest { row: usize, reason: String },

    #[error("feature table row {row}: {reason}")]
    FeatureTable { row: usize, reason: String },

    #[error("missing feature vector for word {utterance_id}#{word_index}")]
    MissingWord {
        utterance_id: String,
        word_index: usize,
    },

    #[error("audio {path}: {reason}")]
    Audio { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("input of length {len} is shorter than kernel width {kernel}")]
    InputTooShort { len: usize, kernel: usize },

    #[error("need at least {needed} speakers for {k} folds, found {found}")]
    TooFewSpeakers { needed: usize, k: usize, found: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("model has no sinc layer")]
    NoSincLayer,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
