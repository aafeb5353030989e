use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = IdcError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum IdcError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("record {id}: {message}")]
    Record { id: String, message: String },

    #[error("could not sample a valid {category} edit after {retries} attempts")]
    Sampling { category: String, retries: usize },

    #[error("paraphrase: {0}")]
    Paraphrase(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at step {step} (lr {lr:.3e}, grad-norm {grad_norm:.3e})")]
    NonFinite { step: usize, lr: f64, grad_norm: f64 },

    #[error("missing prediction for id {0}")]
    MissingPrediction(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl IdcError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IdcError::Io {
            path: path.into(),
            source,
        }
    }
}
