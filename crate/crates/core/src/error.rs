use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("dtype mismatch: file holds code {found}, expected {expected}")]
    DTypeMismatch { expected: u8, found: u8 },

    #[error("parameter `{name}`: {reason}")]
    Parameter { name: String, reason: String },

    #[error("backward called without a cached train-mode forward pass")]
    NoCachedForward,

    #[error("missing frame file {}", .0.display())]
    MissingFrame(PathBuf),

    #[error("bad frame {}: {reason}", path.display())]
    BadFrame { path: PathBuf, reason: String },

    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("{what} loss is not finite at epoch {epoch}")]
    NanLoss { what: &'static str, epoch: usize },

    #[error("batch {batch} (videos {videos:?}): {source}")]
    Batch {
        batch: usize,
        videos: Vec<String>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
