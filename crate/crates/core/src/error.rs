use std::path::PathBuf;

use crate::image::Task;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch for {task}: {msg}")]
    TaskShape { task: Task, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("shape mismatch at fusion level {level}: {msg}")]
    LevelShape { level: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("embedding backend missing: {0}")]
    BackendMissing(String),

    #[error("feature extractor unavailable: {0}")]
    ExtractorMissing(String),

    #[error("non-finite loss term `{term}` at step {step}: {value}")]
    NonFiniteLoss { term: String, step: u64, value: f64 },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("generator spec mismatch: checkpoint has {found}, expected {expected}")]
    SpecMismatch { expected: String, found: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("image codec error: {0}")]
    Image(#[from] ::image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
