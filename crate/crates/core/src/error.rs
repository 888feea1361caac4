use thiserror::Error;

/// Errors raised by the laboratory's numerical components.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite amplitude (blow-up) at t = {t}")]
    BlowUp { t: f64 },

    #[error("ensemble member {member} failed: {source}")]
    Member {
        member: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("time step {dt} violates stability bound {limit}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("non-finite kinetic coefficients at t = {t}")]
    NonFiniteCoefficients { t: f64 },

    #[error("non-integrable flux solution: {0}")]
    NonIntegrable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
