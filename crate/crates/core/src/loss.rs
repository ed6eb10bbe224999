//! Loss families for translation-invariant M-estimation.
//!
//! A loss here is a univariate function `ℓ₀` of the residual together with its
//! first two derivatives and global curvature bounds. The trivariate form
//! `ℓ(v; v₀, w) = ℓ₀(v − v₀ − w)` used by the general theory is provided by
//! [`Loss::eval_g`] and friends; only this adapter composition is in scope.
//!
//! Two instances are provided:
//!
//! - the Tukey biweight loss `ℓ(t) = κ²/6 · (1 − (1 − t²/κ²)³)` for `|t| ≤ κ`,
//!   saturating at `κ²/6` beyond the cutoff. It is convex near the origin,
//!   non-convex in a ring, and exactly flat outside, with curvature range
//!   `[−0.8, 1]` independent of κ;
//! - the quadratic loss `t²/2`, whose every downstream quantity has a classical
//!   closed form. It exists to serve as an oracle instance for the solvers.
//!
//! Curvature bounds are stored constants, not recomputed: `curvature_min`
//! carries an outer negation (it is `−min ℓ″ ∨ 0`, hence nonnegative).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A univariate loss with derivatives and curvature metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum Loss {
    /// Tukey biweight with cutoff `kappa`.
    Tukey { kappa: f64 },
    /// `t²/2`; the closed-form oracle instance.
    Quadratic,
}

impl Loss {
    /// Tukey biweight loss. Errors on a nonpositive cutoff.
    pub fn tukey(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tukey cutoff must be positive, got {kappa}"
            )));
        }
        Ok(Loss::Tukey { kappa })
    }

    pub fn quadratic() -> Self {
        Loss::Quadratic
    }

    /// Loss value at residual `t`.
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Loss::Tukey { kappa } => {
                let c = kappa * kappa / 6.0;
                if t.abs() <= kappa {
                    let r = 1.0 - (t / kappa).powi(2);
                    c - c * r * r * r
                } else {
                    c
                }
            }
            Loss::Quadratic => 0.5 * t * t,
        }
    }

    /// First derivative `ℓ′(t)`.
    pub fn d1(&self, t: f64) -> f64 {
        match *self {
            Loss::Tukey { kappa } => {
                if t.abs() <= kappa {
                    let r = 1.0 - (t / kappa).powi(2);
                    t * r * r
                } else {
                    0.0
                }
            }
            Loss::Quadratic => t,
        }
    }

    /// Second derivative `ℓ″(t)`; for Tukey, `(1 − u)(1 − 5u)` with `u = t²/κ²`.
    pub fn d2(&self, t: f64) -> f64 {
        match *self {
            Loss::Tukey { kappa } => {
                let u = (t / kappa).powi(2);
                if u <= 1.0 {
                    (1.0 - u) * (1.0 - 5.0 * u)
                } else {
                    0.0
                }
            }
            Loss::Quadratic => 1.0,
        }
    }

    /// `L_min`: negation of the global curvature minimum, `−(0 ∧ inf ℓ″)`.
    /// For Tukey this is 0.8 regardless of κ (the minimum of `(1−u)(1−5u)`
    /// over `u ∈ [0, 1]` is −0.8, attained at `u = 3/5`).
    pub fn curvature_min(&self) -> f64 {
        match self {
            Loss::Tukey { .. } => 0.8,
            Loss::Quadratic => 0.0,
        }
    }

    /// `L_max`: global curvature maximum; `ℓ″(0) = 1` for both instances.
    pub fn curvature_max(&self) -> f64 {
        1.0
    }

    /// `L_∨ = L_max ∨ L_min`.
    pub fn curvature_sup(&self) -> f64 {
        self.curvature_max().max(self.curvature_min())
    }

    /// `sup |ℓ′|`; `16κ/(25√5)` for Tukey (attained at `u = 1/5`), `∞` for the
    /// quadratic loss.
    pub fn d1_sup(&self) -> f64 {
        match *self {
            Loss::Tukey { kappa } => 16.0 * kappa / (25.0 * 5.0_f64.sqrt()),
            Loss::Quadratic => f64::INFINITY,
        }
    }

    /// Lipschitz constant of `ℓ′`, i.e. `sup |ℓ″|`.
    pub fn d1_lipschitz(&self) -> f64 {
        1.0
    }

    /// Saturation cutoff, if the loss is exactly flat outside `[−c, c]`.
    pub fn flat_cutoff(&self) -> Option<f64> {
        match *self {
            Loss::Tukey { kappa } => Some(kappa),
            Loss::Quadratic => None,
        }
    }

    /// Saturation value of the loss on the flat region (`κ²/6` for Tukey).
    pub fn flat_value(&self) -> Option<f64> {
        match *self {
            Loss::Tukey { kappa } => Some(kappa * kappa / 6.0),
            Loss::Quadratic => None,
        }
    }

    /// Trivariate adapter value `ℓ(v; v₀, w) = ℓ₀(v − v₀ − w)`.
    pub fn eval_g(&self, v: f64, v0: f64, w: f64) -> f64 {
        self.eval(v - v0 - w)
    }

    /// Adapter first derivative in `v`.
    pub fn d1_g(&self, v: f64, v0: f64, w: f64) -> f64 {
        self.d1(v - v0 - w)
    }

    /// Adapter second derivative in `v`.
    pub fn d2_g(&self, v: f64, v0: f64, w: f64) -> f64 {
        self.d2(v - v0 - w)
    }
}
