use std::io;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum OsaeError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A file failed validation; `field` names the offending header field or section.
    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },

    #[error("training diverged at step {step}: non-finite loss")]
    NonFinite {
        step: u64,
        /// Last finite state, kept so the caller can write a diagnostic checkpoint.
        diagnostic: Box<crate::checkpoint::Checkpoint>,
    },

    #[error("no runs found: {0}")]
    Empty(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl OsaeError {
    /// Short machine-readable tag, used by the CLI for single-line diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            OsaeError::InvalidParameter(_) => "invalid-parameter",
            OsaeError::UndefinedMetric(_) => "undefined-metric",
            OsaeError::Dimension(_) => "dimension",
            OsaeError::Format { .. } => "format",
            OsaeError::NonFinite { .. } => "non-finite",
            OsaeError::Empty(_) => "empty",
            OsaeError::Io(_) => "io",
            OsaeError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, OsaeError>;

pub(crate) fn invalid(msg: impl Into<String>) -> OsaeError {
    OsaeError::InvalidParameter(msg.into())
}

pub(crate) fn format_err(field: impl Into<String>, message: impl Into<String>) -> OsaeError {
    OsaeError::Format {
        field: field.into(),
        message: message.into(),
    }
}
