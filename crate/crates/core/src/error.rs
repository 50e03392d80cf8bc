use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A state became non-finite during integration.
    #[error("solution diverged: first non-finite state at t = {time}")]
    Divergence { time: f64 },

    #[error("non-finite value while evaluating {0}")]
    Evaluation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A norm trace contained a non-positive entry, so its logarithm is undefined.
    #[error("non-positive norm {value:e} at sample {index}")]
    Domain { index: usize, value: f64 },

    /// The improper metric integral had not decayed enough by the horizon cap.
    #[error("metric integral not converged at horizon {horizon}: tail/accumulated trace = {tail_ratio:e}")]
    Truncation { horizon: f64, tail_ratio: f64 },

    #[error("matrix expected symmetric, asymmetry {0:e}")]
    Asymmetry(f64),

    #[error("singular point: {0}")]
    Singular(String),

    #[error("metric not positive definite (min eigenvalue {0:e})")]
    NotPositiveDefinite(f64),

    /// Relative drift of the metric speed along a geodesic exceeded the allowed bound.
    #[error("geodesic speed drift {0:e} exceeds tolerance; reduce the step")]
    SpeedDrift(f64),

    #[error("degenerate pair: the two states coincide")]
    DegeneratePair,
}

pub type Result<T> = std::result::Result<T, Error>;
