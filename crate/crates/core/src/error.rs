use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("backward: {0}")]
    Backward(String),

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("{path}:{line}: {message}")]
    DatasetLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("feature file {path}: {kind}")]
    FeatureFile { path: PathBuf, kind: FeatureFileError },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("numeric failure at epoch {epoch}, step {step}: {message}")]
    Training {
        epoch: usize,
        step: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Distinct feature-file failures; each maps to its own diagnostic.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureFileError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing bytes: expected {expected} bytes, found {found}")]
    TrailingBytes { expected: usize, found: usize },
    #[error("invalid dimension {0}")]
    BadDim(u32),
    #[error("invalid frame count {0}")]
    BadFrameCount(u32),
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("dimension {found} does not match expected {expected}")]
    DimMismatch { expected: usize, found: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_)
            | Error::DatasetLine { .. }
            | Error::FeatureFile { .. }
            | Error::Checkpoint { .. }
            | Error::Io { .. } => 2,
            Error::Shape { .. }
            | Error::InvalidTensor(_)
            | Error::NonFinite { .. }
            | Error::Backward(_)
            | Error::Training { .. } => 3,
        }
    }
}
