use std::path::PathBuf;

/// Failures of the file formats and command drivers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] corrguide_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit code for a successful command.
pub const EXIT_OK: i32 = 0;
/// A check ran to completion and failed (gradient check above tolerance).
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(corrguide_core::Error::Numeric { .. }) => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        }
    }
}
