//! Experiment coordinates: the discrete noise law and the problem configuration.
//!
//! The noise is the four-atom law `w ∈ {−10A, −A, A, 10A}` with probabilities
//! `{0.01, 0.49, 0.49, 0.01}`, so `Var(w) = 0.98 A² + 0.02 (10A)² = 2.98 A²`.
//! The signal-to-noise ratio uses the squared-norm convention
//! `SNR = ‖θ₀‖² / Var(w) = r₀₀ / Var(w)`, hence `A = √(r₀₀ / (2.98 · SNR))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::Loss;

/// A discrete noise law given by weighted atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// `(value, weight)` pairs; weights sum to 1.
    pub atoms: Vec<(f64, f64)>,
    pub variance: f64,
    pub second_moment: f64,
}

impl NoiseSpec {
    /// Build a noise law from explicit atoms, validating normalization.
    pub fn from_atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let total: f64 = atoms.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "noise weights sum to {total}, expected 1"
            )));
        }
        if atoms.iter().any(|&(_, p)| p < 0.0) {
            return Err(Error::InvalidParameter("negative noise weight".into()));
        }
        let mean: f64 = atoms.iter().map(|&(a, p)| p * a).sum();
        let m2: f64 = atoms.iter().map(|&(a, p)| p * a * a).sum();
        Ok(NoiseSpec { atoms, variance: m2 - mean * mean, second_moment: m2 })
    }

    /// The four-atom law scaled so that `SNR = r₀₀ / Var(w)`.
    pub fn from_snr(snr: f64, r00: f64) -> Result<Self> {
        if !(snr > 0.0) || !(r00 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "snr and r00 must be positive, got snr={snr}, r00={r00}"
            )));
        }
        let a = (r00 / (2.98 * snr)).sqrt();
        Self::from_atoms(vec![(-10.0 * a, 0.01), (-a, 0.49), (a, 0.49), (10.0 * a, 0.01)])
    }

    /// Amplitude `A` of the inner atoms (the four-atom construction only).
    pub fn amplitude(&self) -> f64 {
        self.atoms.iter().map(|&(a, _)| a.abs()).fold(f64::INFINITY, f64::min)
    }
}

/// Full problem coordinates consumed by every solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Oversampling ratio `n/d`.
    pub alpha: f64,
    /// Signal-to-noise ratio (squared-norm convention).
    pub snr: f64,
    /// Squared signal norm `‖θ₀‖²` in the limit.
    pub r00: f64,
    /// Ridge weight; the M-estimation experiments run at 0.
    pub lambda: f64,
    pub loss: Loss,
    pub noise: NoiseSpec,
}

impl ProblemConfig {
    /// Standard construction: four-atom noise law pinned to `snr`, `λ = 0`.
    pub fn new(alpha: f64, snr: f64, loss: Loss) -> Result<Self> {
        Self::with_ridge(alpha, snr, 1.0, 0.0, loss)
    }

    pub fn with_ridge(alpha: f64, snr: f64, r00: f64, lambda: f64, loss: Loss) -> Result<Self> {
        if !(alpha > 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must exceed 1, got {alpha}")));
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!("lambda must be nonnegative, got {lambda}")));
        }
        let noise = NoiseSpec::from_snr(snr, r00)?;
        Ok(ProblemConfig { alpha, snr, r00, lambda, loss, noise })
    }

    /// Re-derive and validate the SNR consistency invariant `snr · Var(w) = r₀₀`.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must exceed 1, got {}", self.alpha)));
        }
        let lhs = self.snr * self.noise.variance;
        if (lhs - self.r00).abs() > 1e-9 * self.r00.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "snr * Var(w) = {lhs} is inconsistent with r00 = {}",
                self.r00
            )));
        }
        Ok(())
    }
}
