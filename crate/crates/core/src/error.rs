//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up; `context` names the offending layer
    /// or tensor.
    #[error("shape mismatch at {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("non-finite parameter update at epoch {epoch}, step {step}")]
    NonFiniteUpdate { epoch: usize, step: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("mask exhausted: no surviving prunable weights left to prune")]
    MaskExhausted,

    #[error("non-finite pruning score in {tensor} at flat index {index}")]
    NonFiniteScore { tensor: String, index: usize },

    #[error("{strategy} pruning requires {missing}")]
    MissingScoreInput {
        strategy: &'static str,
        missing: &'static str,
    },

    #[error("missing checkpoint for level {level}: {path}")]
    MissingCheckpoint { level: usize, path: PathBuf },

    #[error(
        "missing re-dense artifact for level {level}: run `diagnose redense --level {level}` first"
    )]
    MissingRedense { level: usize },

    #[error("bad magic in {path}: expected {expected:#010x}, got {got:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        got: u32,
    },

    #[error("truncated file {path}: needed {needed} more bytes")]
    Truncated { path: PathBuf, needed: usize },

    #[error("count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("unsupported checkpoint format: {0}")]
    BadCheckpoint(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("sweep too short: {got} levels, need at least {need}")]
    SweepTooShort { got: usize, need: usize },

    #[error("level {level} not found in sweep directory {dir}")]
    LevelNotFound { level: usize, dir: PathBuf },

    #[error("{path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach a path to a bare I/O error.
    pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::IoAt { path, source }
    }
}
