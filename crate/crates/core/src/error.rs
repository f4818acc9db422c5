use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation was called with arguments outside its contract.
    #[error("misuse: {0}")]
    Misuse(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// Non-finite state or norm beyond the divergence threshold.
    #[error("training diverged at step {step}")]
    Diverged { step: u64 },

    /// The requested computation exceeds the configured size limits.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("requested {requested} samples but only {available} are available")]
    OutOfBounds { requested: usize, available: usize },

    #[error("{path}: {kind}")]
    Idx { path: PathBuf, kind: IdxError },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: expected {expected} payload bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("unexpected image shape {rows}x{cols}")]
    Shape { rows: usize, cols: usize },
    #[error("label {0} out of range")]
    Label(u8),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
