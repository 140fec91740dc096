use std::path::PathBuf;

use lssf_tensor::TensorError;
use thiserror::Error;

pub type Result<T, E = LssfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LssfError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parameter `{0}` is not registered")]
    MissingParam(String),

    #[error("parameter `{0}` registered twice")]
    DuplicateParam(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite gradient for `{0}`; optimizer step aborted")]
    NonFiniteGradient(String),
}

impl LssfError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LssfError::Io {
            path: path.into(),
            source,
        }
    }
}
