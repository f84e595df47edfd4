use thiserror::Error;

/// Errors raised by the simulator and the verification harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("grid mismatch: expected {expected} values, found {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("grid with {n_interior} interior nodes per axis is too coarse for derivative order m = {m}")]
    GridTooCoarse { n_interior: usize, m: usize },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("numerical blow-up at step {step} (t = {time}): {reason}")]
    BlowUp { step: usize, time: f64, reason: String },

    #[error("zero pivot in banded factorization at row {0}")]
    SingularPivot(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by the numerics rather than by the inputs.
    pub fn is_blow_up(&self) -> bool {
        matches!(
            self,
            Error::BlowUp { .. } | Error::NewtonDiverged { .. } | Error::NonFinite { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
