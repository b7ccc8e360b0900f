//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, VbilError>;

/// Errors surfaced by the variational engine and its estimators.
#[derive(Debug, Error)]
pub enum VbilError {
    /// An input lies outside the mathematical domain of an operation
    /// (e.g. a Beta evaluation point outside (0,1)).
    #[error("domain error: {0}")]
    Domain(String),

    /// A factor or family reached an invalid internal state
    /// (non-finite natural parameters, broken invariants).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A matrix that must be positive definite or well conditioned is not.
    /// Carries the natural parameters that produced it for diagnostics.
    #[error("conditioning error: {what} (lambda = {lambda:?})")]
    Conditioning { what: String, lambda: Vec<f64> },

    /// A caller violated an API contract (wrong uniform count, mismatched
    /// dimensions, inconsistent inputs).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The request exceeds a built-in capability (e.g. Sobol dimension
    /// beyond the direction-number table).
    #[error("capability exceeded: {0}")]
    Capability(String),

    /// Bad configuration values.
    #[error("config error: {0}")]
    Config(String),

    /// The optimizer failed to converge within its iteration budget where
    /// convergence was required.
    #[error("non-convergence: {0}")]
    NonConvergence(String),

    /// A numerical procedure aborted (persistent natural-gradient failures,
    /// a stuck Markov chain, degenerate proposals).
    #[error("numerical abort: {0}")]
    Numerical(String),

    /// Malformed input data files.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
