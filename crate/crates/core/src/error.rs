//! Error taxonomy for the landscape library.
//!
//! Two broad classes matter to callers: configuration errors (bad parameters,
//! malformed grids, schema violations) and numeric failures (non-convergence,
//! empty brackets, domain violations discovered mid-computation). The CLI maps
//! the former to exit code 2 and the latter to exit code 3.

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violated a documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A configuration file or flag set failed validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An integrand or update produced a non-finite value.
    #[error("numeric domain error: {what} at {where_}")]
    NumericDomain { what: String, where_: String },

    /// A root bracket did not straddle the target (e.g. the stability
    /// classifier is constant over the requested alpha interval).
    #[error("bracket error: {0}")]
    Bracket(String),

    /// An iterative solver exhausted its budget without meeting tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// A query lay outside the mathematical domain of the operation
    /// (e.g. a Stieltjes evaluation point inside the spectrum).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code class: 2 for usage/config errors, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::InvalidConfig(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
