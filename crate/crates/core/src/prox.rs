//! One-dimensional proximal operator for possibly non-convex losses, plus the
//! pushforward density of a Gaussian through it.
//!
//! For `s` strictly below the inverse of the largest negative curvature, the
//! objective `(x − z)²/(2s) + ℓ(x; v₀, w)` is strongly convex, so the
//! stationarity equation `s · ℓ′(x; v₀, w) + x = z` has a unique root. The
//! solver is a safeguarded Newton iteration on that equation with a bisection
//! fallback inside a bracket derived from the bound on `ℓ′`.

use crate::error::{Error, Result};
use crate::loss::Loss;

/// Residual tolerance on the stationarity defect.
const TOL: f64 = 1e-12;
const MAX_ITER: usize = 100;

/// Solution of the proximal problem at one point.
#[derive(Debug, Clone, Copy)]
pub struct ProxResult {
    /// The minimizer `v`.
    pub value: f64,
    /// `∂v/∂z = 1/(1 + s·ℓ″(v; v₀, w))`.
    pub derivative: f64,
    /// Stationarity defect `s·ℓ′(v) + v − z` at the returned value.
    pub residual: f64,
}

fn check_s(s: f64, loss: &Loss) -> Result<()> {
    let lmin = loss.curvature_min();
    let ok = s > 0.0 && s.is_finite() && (lmin == 0.0 || s < 1.0 / lmin);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "prox scale s={s} outside the admissible interval (0, {})",
            if lmin == 0.0 { f64::INFINITY } else { 1.0 / lmin }
        )))
    }
}

/// `Prox_{ℓ(·; v₀, w)}(z; s)`: the unique root of `s·ℓ′(x; v₀, w) + x = z`.
pub fn prox(z: f64, s: f64, loss: &Loss, v0: f64, w: f64) -> Result<ProxResult> {
    check_s(s, loss)?;
    // Shift to the loss's own coordinate t = x − v₀ − w.
    let zt = z - v0 - w;
    let g = |t: f64| s * loss.d1(t) + t - zt;

    // Bracket the root: |ℓ′| ≤ d1_sup gives it directly for bounded-influence
    // losses; otherwise start from the identity guess and widen geometrically.
    let (mut lo, mut hi) = if loss.d1_sup().is_finite() {
        (zt - s * loss.d1_sup(), zt + s * loss.d1_sup())
    } else {
        (zt.min(0.0) - s * zt.abs(), zt.max(0.0) + s * zt.abs())
    };
    let mut width = (hi - lo).max(1.0);
    for _ in 0..64 {
        if g(lo) <= 0.0 && g(hi) >= 0.0 {
            break;
        }
        lo -= width;
        hi += width;
        width *= 2.0;
    }

    let mut t = zt.clamp(lo, hi);
    for _ in 0..MAX_ITER {
        let gt = g(t);
        if gt.abs() <= TOL {
            return Ok(ProxResult {
                value: t + v0 + w,
                derivative: 1.0 / (1.0 + s * loss.d2(t)),
                residual: gt,
            });
        }
        if gt > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let slope = 1.0 + s * loss.d2(t);
        let mut next = t - gt / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        t = next;
    }
    Err(Error::NoConvergence { iterations: MAX_ITER, residual: g(t).abs() })
}

/// Density of `Prox(Z; s)` at `v` when `Z ~ N(0, rho2)` (shifted by `v₀ + w`
/// through the loss): `(1 + s·ℓ″(v; v₀, w)) · φ(s·ℓ′(v; v₀, w) + v; rho2)`.
pub fn prox_density(v: f64, s: f64, rho2: f64, loss: &Loss, v0: f64, w: f64) -> Result<f64> {
    check_s(s, loss)?;
    if !(rho2 > 0.0) {
        return Err(Error::InvalidParameter(format!("rho2 must be positive, got {rho2}")));
    }
    let t = v - v0 - w;
    let z = s * loss.d1(t) + v;
    let jac = 1.0 + s * loss.d2(t);
    Ok(jac * (-0.5 * z * z / rho2).exp() / (2.0 * std::f64::consts::PI * rho2).sqrt())
}
