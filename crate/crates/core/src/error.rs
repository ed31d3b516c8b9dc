use std::path::PathBuf;

use thiserror::Error;

/// Error type shared by every pipeline stage.
#[derive(Debug, Error)]
pub enum KawhiError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A tensor or image file did not match its declared layout.
    #[error("format error in {field}: {detail}")]
    Format { field: &'static str, detail: String },

    #[error("numeric error at index {index}: {detail}")]
    Numeric { index: usize, detail: String },

    /// The reward verifier or task generator could not score a response.
    #[error("task error: {0}")]
    Task(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("image decode error: {0}")]
    Image(#[from] ::image::ImageError),
}

impl KawhiError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        KawhiError::InvalidArgument(msg.into())
    }

    pub(crate) fn format(field: &'static str, detail: impl Into<String>) -> Self {
        KawhiError::Format {
            field,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KawhiError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = KawhiError> = std::result::Result<T, E>;
