use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ALL_DIVERGED: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 4;
/// I/O and other runtime failures not covered by the documented codes.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("every run diverged ({runs} runs)")]
    AllDiverged { runs: usize },
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] rlr_core::Error),
}

impl HarnessError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    /// Core parameter errors raised while resolving a configuration.
    pub fn from_core_config(e: rlr_core::Error) -> Self {
        Self::Config(e.to_string())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Core(rlr_core::Error::InvalidParameter { .. } | rlr_core::Error::DimensionMismatch { .. }) => {
                EXIT_CONFIG
            }
            Self::Core(rlr_core::Error::OutOfBounds { .. } | rlr_core::Error::Idx { .. }) => EXIT_CONFIG,
            Self::AllDiverged { .. } => EXIT_ALL_DIVERGED,
            Self::Verification(_) => EXIT_VERIFICATION,
            _ => EXIT_RUNTIME,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
