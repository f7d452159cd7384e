use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by the library.
///
/// Variants are grouped by how callers should react: configuration and
/// dimension problems are caller mistakes, `Numerical` signals a failed
/// computation on otherwise valid input, and the I/O variants carry enough
/// context to point at the offending file (and line, for parse errors).
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its documented precondition.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Two arguments disagree on a dimension that must match.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A numerical operation failed (e.g. a covariance lost positive
    /// definiteness beyond what jitter can recover).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file content, reported with a 1-based line number.
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
