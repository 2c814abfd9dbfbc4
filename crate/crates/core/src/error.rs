use thiserror::Error;

/// Errors raised by model construction, propagation, and filtering.
#[derive(Debug, Error)]
pub enum Error {
    #[error("model validation failed: {0}")]
    Validation(String),

    #[error("joint state space has {states} states, exceeding the cap of {cap}")]
    StateSpaceCap { states: u128, cap: usize },

    #[error("evidence {var}={value} has zero probability under the current belief state")]
    ZeroProbabilityEvidence { var: String, value: usize },

    #[error("no tracked sparse states are consistent with evidence {var}={value}")]
    SparseInconsistency { var: String, value: usize },

    #[error("RKF step size underflow at t={t} (h={h}): system too stiff for the requested tolerance")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("Poisson truncation cap l={cap} reached with tail {achieved:e} >= tolerance {tol:e}")]
    TruncationCapReached { cap: usize, achieved: f64, tol: f64 },

    #[error("process is frozen (alpha = 0)")]
    FrozenProcess,

    #[error("distribution mass is zero")]
    ZeroMass,

    #[error("{0}")]
    InvalidInput(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
