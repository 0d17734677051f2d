use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("order error: {0}")]
    Order(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("index error: {index} out of range 0..{len}")]
    Index { index: usize, len: usize },
    #[error("corrupt store: frame {frame} is truncated ({detail})")]
    Corruption { frame: u64, detail: String },
    #[error("no admissible candidate frames")]
    NoCandidate,
}

/// Stable machine-readable category of an [`Error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorKind {
    IoError,
    FormatError,
    DimensionError,
    OrderError,
    RangeError,
    ParameterError,
    IndexError,
    CorruptionError,
    NoCandidateError,
    /// Reported by the service when an operation dies without an [`Error`].
    InternalError,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::IoError,
            Error::Format(_) => ErrorKind::FormatError,
            Error::Dimension(_) => ErrorKind::DimensionError,
            Error::Order(_) => ErrorKind::OrderError,
            Error::Range(_) => ErrorKind::RangeError,
            Error::Parameter(_) => ErrorKind::ParameterError,
            Error::Index { .. } => ErrorKind::IndexError,
            Error::Corruption { .. } => ErrorKind::CorruptionError,
            Error::NoCandidate => ErrorKind::NoCandidateError,
        }
    }
}

/// Serializable form of an error, as reported to callers of the service and CLI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub message: String,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for ErrorBody {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}
