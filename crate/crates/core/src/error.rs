use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("length mismatch: {left} rows vs {right} labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid condition on feature {feature}: {reason}")]
    InvalidCondition { feature: usize, reason: String },

    #[error("invalid rule: {0}")]
    InvalidRule(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("oracle error: {message}{}", stderr_suffix(.stderr))]
    Oracle { message: String, stderr: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn stderr_suffix(stderr: &str) -> String {
    if stderr.trim().is_empty() {
        String::new()
    } else {
        format!(" (stderr: {})", stderr.trim())
    }
}

impl Error {
    pub(crate) fn oracle(message: impl Into<String>) -> Self {
        Error::Oracle {
            message: message.into(),
            stderr: String::new(),
        }
    }
}
