//! Crate-wide error type.
//!
//! Numerical failure modes (divergence, singularity, infeasibility) are
//! recoverable conditions reported through [`Error`], never panics; panics are
//! reserved for internal logic bugs.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible matrix/vector dimensions or malformed shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A constructor or operation contract was violated (bad argument).
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// A simulated state exceeded the divergence threshold.
    #[error("simulation diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    /// An iterative solver ran out of its iteration budget.
    #[error("{solver} did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence {
        solver: &'static str,
        residual: f64,
        iterations: usize,
    },

    /// A matrix that must be invertible (or positive definite) was not.
    #[error("singular or indefinite matrix in {0}")]
    Singular(String),

    /// H∞ synthesis infeasible at the requested attenuation level.
    #[error("H-infinity synthesis infeasible at gamma = {gamma}: {reason}")]
    HinfInfeasible { gamma: f64, reason: String },

    /// A non-finite value appeared where finiteness is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed file contents (dataset, checkpoint, task, config).
    #[error("parse error in {what}: {detail}")]
    Parse { what: String, detail: String },

    /// A search or protocol produced no usable result.
    #[error("{0}")]
    Protocol(String),
}

impl Error {
    /// Shorthand for dimension errors.
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Shorthand for invalid-argument errors.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Shorthand for parse errors.
    pub fn parse(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            detail: detail.into(),
        }
    }
}
