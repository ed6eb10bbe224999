//! Exact asymptotics for robust M-estimation with bounded-influence losses:
//! fixed-point solvers for the limiting estimator geometry, spectral
//! diagnostics for the limiting Hessian, large-deviation rate evaluators for
//! the excess-risk landscape, and finite-dimensional simulation drivers that
//! bridge the theory to synthetic data.

pub mod cli;
pub mod config;
pub mod error;
pub mod loss;
pub mod prox;
pub mod quad;
pub mod rate;
pub mod se;
pub mod sim;
pub mod spectral;

pub use config::{NoiseSpec, ProblemConfig};
pub use error::{Error, Result};
pub use loss::Loss;
