use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = RsmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RsmError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("state error: {0}")]
    State(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("edit {index}: {message}")]
    Edit { index: usize, message: String },

    #[error("non-finite loss at step {step}; parameter norms: {norms}")]
    NonFiniteLoss { step: u64, norms: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RsmError {
    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RsmError::File {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        RsmError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by a bad configuration rather than bad data.
    pub fn is_config(&self) -> bool {
        matches!(self, RsmError::Config { .. } | RsmError::Edit { .. })
    }
}
