use thiserror::Error;

use crate::analysis::FitResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Hilbert-space dimension {dimension} exceeds the configured maximum {max}")]
    Capacity { dimension: usize, max: usize },

    #[error("not found: {0}")]
    NotFound(String),

    /// Carries the best estimate reached before giving up, when there is one.
    #[error("fit did not converge: {message}")]
    NonConvergence {
        message: String,
        best: Option<Box<FitResult>>,
    },

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    /// `line` is 1-based; 0 means the problem is not tied to one line.
    #[error("{}: {message}", location(path, *line))]
    Config { path: String, line: usize, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

fn location(path: &str, line: usize) -> String {
    if line == 0 {
        path.to_string()
    } else {
        format!("{path}:{line}")
    }
}
