use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite state at integration step {step}")]
    NonFinite { step: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("index {index} out of range for {len} points")]
    OutOfRange { index: usize, len: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("bad magic in {0}")]
    BadMagic(&'static str),

    #[error("unsupported {what} version {found} (expected {expected})")]
    VersionMismatch {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("content hash mismatch: file is corrupted")]
    HashMismatch,

    #[error("truncated {0}")]
    Truncated(&'static str),

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("expert failed to produce a collision-free demonstration after {0} attempts")]
    ExpertFailed(usize),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
