use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed WAV: {0}")]
    Parse(String),

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid audio clip: {0}")]
    InvalidClip(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown feature spec `{0}`")]
    FeatureSpec(String),

    #[error("degenerate statistics: {0}")]
    DegenerateStats(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("layer {index} ({name}): {message}")]
    Layer {
        index: usize,
        name: String,
        message: String,
    },

    #[error("corrupt weights: {0}")]
    CorruptWeights(String),

    #[error("network kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
