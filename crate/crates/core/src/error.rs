use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure category, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad parameter or precondition supplied by the caller.
    Usage,
    /// Malformed, truncated, or inconsistent data on disk or in memory.
    Data,
    /// NaN/overflow or a failed optimization.
    Numeric,
    /// Operating-system I/O failure.
    Io,
}

impl ErrorKind {
    /// Process exit status for command-line front ends: 2 usage, 3 data
    /// or I/O, 4 numeric.
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Data | ErrorKind::Io => 3,
            ErrorKind::Numeric => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("truncated payload: {0}")]
    Truncated(String),
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("stratification error: class {class} has {count} members (need at least 3)")]
    Stratification { class: u32, count: usize },
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("shape mismatch in tensor `{tensor}`: expected {expected:?}, found {found:?}")]
    Shape {
        tensor: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("non-finite gradient for parameter `{0}`")]
    Gradient(String),
    #[error("training failed at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Parameter(_) | Error::Size(_) | Error::Stratification { .. } => {
                ErrorKind::Usage
            }
            Error::NonFinite(_) | Error::Gradient(_) | Error::Training { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
