use thiserror::Error;

/// Errors split into two families: bad input (CLI exit code 2) and runtime
/// failure (exit code 1). `is_invalid_input` encodes the split.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("all-zero environment map: diffuseness is undefined")]
    UndefinedGini,
    #[error("degenerate lighting: source Gini {source_gini} not above diffuse Gini {diffuse_gini}")]
    DegenerateLighting { source_gini: f64, diffuse_gini: f64 },
    #[error("shadow map saturated at 1: diffuse radiance was lost to the clamp")]
    SaturatedShadow,
    #[error("degenerate tint component {0}: channel cannot be divided out")]
    DegenerateTint(f64),
    #[error("skin mask is empty: no crop region for tint estimation")]
    EmptySkinRegion,
    #[error("file format error: {0}")]
    Format(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: u64, loss: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Internal(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// True for errors the caller caused (bad arguments, malformed files,
    /// mathematically undefined requests) as opposed to runtime failures.
    pub fn is_invalid_input(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::DimensionMismatch(_)
                | Error::UndefinedGini
                | Error::DegenerateLighting { .. }
                | Error::SaturatedShadow
                | Error::DegenerateTint(_)
                | Error::EmptySkinRegion
                | Error::Format(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
