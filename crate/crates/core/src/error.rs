use alloc::string::String;

/// Errors raised by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("token ({i}, {j}) out of bounds for {h}x{w} half grid")]
    OutOfBounds { i: usize, j: usize, h: usize, w: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numeric failure{}: {detail}", step.map(|s| alloc::format!(" at step {s}")).unwrap_or_default())]
    Numeric { step: Option<usize>, detail: String },
    #[error("generation failed: {0}")]
    Generation(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// Attach a denoising step index to a numeric error.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::Numeric { detail, .. } => Error::Numeric { step: Some(step), detail },
            other => other,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
