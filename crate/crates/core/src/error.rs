use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes; the CLI maps them onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Backend,
    Data,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: record {index}: {message}")]
    Format {
        path: PathBuf,
        index: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("backend error{}: {message}", .id.as_deref().map(|id| format!(" (sample {id})")).unwrap_or_default())]
    Backend { id: Option<String>, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Backend { .. } => ErrorKind::Backend,
            Error::Format { .. }
            | Error::Validation(_)
            | Error::Data(_)
            | Error::Numeric(_)
            | Error::Consistency(_)
            | Error::UndefinedCorrelation(_)
            | Error::Io { .. } => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn backend(id: Option<&str>, message: impl Into<String>) -> Self {
        Error::Backend {
            id: id.map(str::to_owned),
            message: message.into(),
        }
    }

    /// Attaches a sample id to a backend error raised without one.
    pub(crate) fn with_sample(self, sample_id: &str) -> Self {
        match self {
            Error::Backend { id: None, message } => Error::Backend {
                id: Some(sample_id.to_owned()),
                message,
            },
            other => other,
        }
    }
}
