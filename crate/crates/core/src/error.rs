use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("backward called twice on the same graph without reset")]
    BackwardTwice,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid tensor file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("fixture {dir}: {reason}")]
    Fixture { dir: String, reason: String },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: usize },

    #[error("{0}")]
    Invalid(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
