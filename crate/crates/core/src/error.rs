use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{op} requires a scalar tensor, got {len} elements")]
    NotScalar { op: &'static str, len: usize },

    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: u64, value: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Pgm(#[from] PgmError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    PatchCache(#[from] PatchCacheError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PgmError {
    #[error("unsupported image format {magic:?}; only binary PGM (P5) is accepted")]
    UnsupportedFormat { magic: String },
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0}; only 8-bit (255) images are accepted")]
    UnsupportedMaxval(u32),
    #[error("truncated pixel data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatchCacheError {
    #[error("not a patch cache file (bad magic)")]
    BadMagic,
    #[error("unsupported patch cache version {0}")]
    Version(u32),
    #[error("patch cache truncated")]
    Truncated,
}
