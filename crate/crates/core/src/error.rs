use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("zero-norm row {row} passed to cosine similarity")]
    ZeroNorm { row: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("node {0} is not on this tape")]
    UnknownNode(usize),

    #[error("backward seed must be scalar, got {rows}x{cols}")]
    NonScalarSeed { rows: usize, cols: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("missing metric: {0}")]
    MissingMetric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Error::InvalidArgument(detail.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than bad input or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::ZeroNorm { .. })
    }
}
