//! Large-deviations rate of the empirical-risk landscape complexity.
//!
//! The number of critical points of the sample risk at distance `ρ` from the
//! signal and training-loss level `ι` concentrates on `exp{d·Φ(ρ; ι)}`; this
//! module evaluates the variational formula for `Φ` and its derived curves.
//! The formula has three layers:
//!
//! 1. an inner **concave maximization** over Lagrange multipliers
//!    `(γ, β, η, ξ, ζ ≥ 0)` of `{linear terms} − E_w log X`, where `log X` is
//!    the log-partition function of an exponential tilt of the base measure
//!    `(1 + sℓ″) dγ_R` — convex in the multipliers, so its negation is
//!    concave and a projected Newton ascent is globally convergent;
//! 2. an outer **minimization over `(s, g)`**, the spectral scale and the
//!    constrained second moment of `ℓ′`, solved by coordinate descent with
//!    golden-section line searches and multistart;
//! 3. grid **tabulation over `(ρ, ι)`** with the derived quantities: the
//!    unconstrained envelope `Φ_∞(ρ) = min_ι Φ(ρ; ι)`, the largest loss level
//!    `ι₀` at which `min_ρ Φ(·; ι)` is still positive, the censored envelope
//!    `Φ₀(ρ) = min_{ι ≤ ι₀} Φ(ρ; ι)`, and its argmin `ρ⋆`.
//!
//! Alongside the rate itself the module provides the trivialization
//! diagnostics (the constants `α₀`, `τ₀`, the membership test for the
//! near-trivial set, the bound certificates `B⋆`, `G⋆`, and the closed-form
//! sufficient oversampling ratio `α⋆`) and the measure-space decomposition of
//! the rate into Kullback–Leibler divergences plus a Fisher-type penalty,
//! evaluated on the parametric family of proximal pushforward measures.
//!
//! Quadrature note: the integrands contain the ratio `r = sℓ″/(1 + sℓ″)`,
//! which develops a sharp spike at the curvature trough of a bounded loss as
//! `s` approaches `1/L_min`. Node builders insert a geometric ladder of panel
//! breakpoints around each trough whenever `s` is close to the cap, so tilted
//! moments of `r` and `r²` stay accurate over the whole admissible range.

use crate::config::ProblemConfig;
use crate::error::{Error, Result};
use crate::loss::Loss;
use crate::prox::{prox, prox_density};
use crate::quad::{
    expect_kinked, gaussian_segment_nodes, JointGrid, QuadratureGrid, Tail, DEFAULT_ORDER_1D,
    DEFAULT_PANEL_ORDER, Z_MAX,
};
use crate::se::se_solve;
use crate::spectral::{replicon_e3, CurvatureMeasure};
use nalgebra::{Cholesky, Matrix2, SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Multiplier count of the scalar (translation-reduced) inner problem.
const N_SCALAR: usize = 5;
/// Multiplier count of the general matrix-order inner problem.
const N_GENERAL: usize = 6;

/// Tuning knobs for the rate evaluation. `a_l`/`a_r` bound the gradient and
/// radius windows of the landscape statement; the remaining fields control
/// quadrature resolution and the two optimizer layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateOptions {
    /// Lower gradient-scale cutoff `𝖺_L` (the certified window starts here).
    pub a_l: f64,
    /// Outer radius cutoff `𝖠_R` for the certified window.
    pub a_r: f64,
    /// Gauss–Legendre order per quadrature panel.
    pub panel_order: usize,
    /// Gauss–Hermite order for the conditional second coordinate (matrix form).
    pub v0_order: usize,
    /// Gradient-norm tolerance of the inner multiplier ascent.
    pub inner_tol: f64,
    /// Iteration cap of the inner multiplier ascent.
    pub inner_max_iter: usize,
    /// Number of outer multistart points (a fixed-point hint counts extra).
    pub outer_starts: usize,
    /// Cap on coordinate-descent sweeps of the outer minimization.
    pub outer_max_sweeps: usize,
    /// Relative value tolerance ending the outer coordinate descent.
    pub outer_value_tol: f64,
    /// Golden-section window tolerance, relative to each coordinate range.
    pub outer_xtol: f64,
    /// Lower end of the spectral-scale search interval.
    pub s_floor: f64,
    /// Relative shave below `1/L_min` for the upper end of the `s` interval.
    pub s_margin: f64,
    /// Number of grid points for the `β`-sweep of the `α⋆` certificate.
    pub beta_grid: usize,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions {
            a_l: 0.05,
            a_r: 2.0,
            panel_order: DEFAULT_PANEL_ORDER,
            v0_order: 12,
            inner_tol: 1e-8,
            inner_max_iter: 80,
            outer_starts: 3,
            outer_max_sweeps: 6,
            outer_value_tol: 1e-8,
            outer_xtol: 2e-5,
            s_floor: 1e-4,
            s_margin: 1e-3,
            beta_grid: 200,
        }
    }
}

impl RateOptions {
    /// Check every knob against its documented domain.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.a_l > 0.0 && self.a_r > self.a_l) {
            return bad(format!("need 0 < a_l < a_r, got a_l={}, a_r={}", self.a_l, self.a_r));
        }
        if self.panel_order < 2 || self.v0_order < 2 {
            return bad("quadrature orders must be at least 2".into());
        }
        if !(self.inner_tol > 0.0 && self.outer_value_tol > 0.0 && self.outer_xtol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.inner_max_iter == 0 || self.outer_max_sweeps == 0 || self.outer_starts == 0 {
            return bad("iteration budgets must be positive".into());
        }
        if !(self.s_floor > 0.0 && self.s_margin > 0.0 && self.s_margin < 1.0) {
            return bad(format!(
                "need s_floor > 0 and s_margin in (0,1), got {} and {}",
                self.s_floor, self.s_margin
            ));
        }
        if self.beta_grid < 2 {
            return bad("beta_grid must be at least 2".into());
        }
        Ok(())
    }
}

/// Lagrange multipliers of the inner problem. `beta` has two components in
/// the matrix-order form; the translation-reduced scalar form uses `beta[0]`
/// and requires `beta[1] = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateMultipliers {
    pub gamma: f64,
    pub beta: [f64; 2],
    pub eta: f64,
    pub xi: f64,
    /// Multiplier of the replicon-type constraint; kept nonnegative.
    pub zeta: f64,
}

impl RateMultipliers {
    pub fn zero() -> Self {
        RateMultipliers { gamma: 0.0, beta: [0.0; 2], eta: 0.0, xi: 0.0, zeta: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.gamma, self.beta[0], self.beta[1], self.eta, self.xi, self.zeta];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite multiplier".into()));
        }
        if self.zeta < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "zeta must be nonnegative, got {}",
                self.zeta
            )));
        }
        Ok(())
    }
}

/// Outer variables at which a rate value was produced: spectral scale `s`,
/// constrained gradient second moment `g`, the radius `ρ` (square root of the
/// Schur complement in the matrix form), and the loss level `ι`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateInnerVars {
    pub s: f64,
    pub g: f64,
    pub rho: f64,
    pub level: f64,
}

/// Result of the inner concave maximization over multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerSolution {
    /// Supremum value; `+∞` when the constraint set is unreachable.
    pub value: f64,
    pub multipliers: RateMultipliers,
    /// False when the requested `(g, ι)` levels cannot be met by any tilt.
    pub feasible: bool,
    /// Whether the ascent met the gradient tolerance.
    pub converged: bool,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// One fully optimized rate cell `(ρ, ι) ↦ Φ` with the outer minimizer and
/// the inner maximizing multipliers, reusable as a warm start for neighbors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub value: f64,
    pub vars: RateInnerVars,
    pub multipliers: RateMultipliers,
    /// Inner ascent converged at the reported outer minimizer.
    pub converged: bool,
}

/// Tabulated rate surface with its derived markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSurface {
    pub rho_grid: Vec<f64>,
    pub iota_grid: Vec<f64>,
    /// `phi[i][j] = Φ(rho_grid[i]; iota_grid[j])`.
    pub phi: Vec<Vec<f64>>,
    /// Largest loss level at which the minimum of `Φ` over `ρ` is still
    /// positive (bisection-refined between grid columns).
    pub iota0: f64,
    /// Argmin over `ρ` of the censored envelope `Φ₀` (locally refined).
    pub rho_star: f64,
}

impl RateSurface {
    /// Unconstrained envelope `Φ_∞(ρ) = min_ι Φ(ρ; ι)` over the grid.
    pub fn phi_inf(&self) -> Vec<f64> {
        self.phi.iter().map(|row| row.iter().copied().fold(f64::INFINITY, f64::min)).collect()
    }

    /// Censored envelope `Φ₀(ρ) = min_{ι ≤ ι₀} Φ(ρ; ι)` over the grid.
    pub fn phi_zero(&self) -> Vec<f64> {
        let cols: Vec<usize> = (0..self.iota_grid.len())
            .filter(|&j| self.iota_grid[j] <= self.iota0 + 1e-15)
            .collect();
        self.phi
            .iter()
            .map(|row| {
                let take = if cols.is_empty() { vec![0] } else { cols.clone() };
                take.iter().map(|&j| row[j]).fold(f64::INFINITY, f64::min)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Quadrature clouds for the tilted partition function
// ---------------------------------------------------------------------------

/// Per-noise-atom node cloud of a tilted log-partition function: `X(m) =
/// Σ exp{F_i·m + log_base_i}` approximates the restricted integral against
/// the base measure, with all multiplier dependence in the linear exponent.
struct AtomCloud<const N: usize> {
    prob: f64,
    features: Vec<SVector<f64, N>>,
    log_base: Vec<f64>,
}

/// Locations of the local curvature troughs of a bounded loss, found by a
/// scan-and-refine of `ℓ″` over the saturation band. Near `s ↑ 1/L_min` the
/// factor `1/(1 + sℓ″)` spikes there and panels must be refined around them.
fn curvature_troughs(loss: &Loss) -> Vec<f64> {
    let Some(kappa) = loss.flat_cutoff() else { return Vec::new() };
    let n = 1024;
    let grid: Vec<f64> = (0..=n).map(|i| -kappa + 2.0 * kappa * i as f64 / n as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&t| loss.d2(t)).collect();
    let threshold = -0.5 * loss.curvature_min();
    let mut out = Vec::new();
    for i in 1..n {
        if vals[i] < threshold && vals[i] <= vals[i - 1] && vals[i] <= vals[i + 1] {
            let (t, _) =
                golden_min(|t| loss.d2(t), grid[i - 1], grid[i + 1], 1e-12 * kappa.max(1.0), 120);
            out.push(t);
        }
    }
    out
}

/// Panel breakpoints (in standardized `z` units of a `N(0, sd²)` variable
/// for `u = w + sd·z`-style integrals) covering `[−Z_MAX, Z_MAX]` with kinks
/// at the saturation-band edges and, when `s` is near the curvature cap, a
/// geometric ladder around each curvature trough.
fn scalar_breaks(loss: &Loss, s: f64, sd: f64, shift: f64) -> Vec<f64> {
    let mut z = vec![-Z_MAX, Z_MAX];
    if let Some(kappa) = loss.flat_cutoff() {
        for edge in [-kappa, kappa] {
            let zz = (edge + shift) / sd;
            if zz.abs() < Z_MAX {
                z.push(zz);
            }
        }
        if 1.0 + s * (-loss.curvature_min()) < 0.05 {
            for trough in curvature_troughs(loss) {
                let mut off = 1e-4 * kappa.max(1.0);
                while off < 0.2 * kappa.max(1.0) {
                    for t in [trough - off, trough + off] {
                        let zz = (t + shift) / sd;
                        if zz.abs() < Z_MAX {
                            z.push(zz);
                        }
                    }
                    off *= 4.0;
                }
            }
        }
    }
    z.sort_by(f64::total_cmp);
    z.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    z
}

/// Scalar-form node cloud for one noise atom `(a, p)`: the base variable is
/// `u ~ N(0, ρ²)`, the loss argument `t = u − a`, and the features are
/// `(ℓ′², u·ℓ′, ψ(u, a), r, −r²)` with `r = sℓ″/(1 + sℓ″)`.
fn scalar_cloud(
    s: f64,
    rho: f64,
    atom: (f64, f64),
    loss: &Loss,
    psi: &dyn Fn(f64, f64) -> f64,
    panel: &QuadratureGrid,
) -> Result<AtomCloud<N_SCALAR>> {
    let (a, p) = atom;
    let breaks = scalar_breaks(loss, s, rho, a);
    let mut features = Vec::new();
    let mut log_base = Vec::new();
    for pair in breaks.windows(2) {
        for (u, w) in gaussian_segment_nodes(0.0, rho, pair[0], pair[1], panel) {
            if w <= 0.0 {
                continue;
            }
            let t = u - a;
            let d1 = loss.d1(t);
            let d2 = loss.d2(t);
            let jac = 1.0 + s * d2;
            if jac <= 0.0 {
                return Err(Error::NumericDomain {
                    what: format!("nonpositive metric factor 1 + s·ℓ″ = {jac}"),
                    where_: format!("scalar tilt node t={t}, s={s}"),
                });
            }
            let r = s * d2 / jac;
            features.push(SVector::<f64, N_SCALAR>::from([
                d1 * d1,
                u * d1,
                psi(u, a),
                r,
                -r * r,
            ]));
            log_base.push(w.ln() + jac.ln());
        }
    }
    if features.is_empty() {
        return Err(Error::NumericDomain {
            what: "empty quadrature cloud".into(),
            where_: format!("scalar tilt atom a={a}"),
        });
    }
    Ok(AtomCloud { prob: p, features, log_base })
}

/// Matrix-form node cloud for one noise atom: the base pair `(v, v₀)` is
/// `N(0, R)`-distributed, integrated as `u = v − v₀` (the loss argument is
/// `t = u − a`) times the conditional Gaussian `v₀ | u`. Features are
/// `(ℓ′², v·ℓ′, v₀·ℓ′, ψ(v, v₀, a), r, −r²)`.
#[allow(clippy::too_many_arguments)]
fn general_cloud(
    s: f64,
    r11: f64,
    r10: f64,
    r00: f64,
    atom: (f64, f64),
    loss: &Loss,
    psi: &dyn Fn(f64, f64, f64) -> f64,
    panel: &QuadratureGrid,
    gh: &QuadratureGrid,
) -> Result<AtomCloud<N_GENERAL>> {
    let (a, p) = atom;
    let var_u = r11 - 2.0 * r10 + r00;
    if !(var_u > 1e-14) {
        return Err(Error::InvalidParameter(format!(
            "degenerate difference variance r11 - 2 r10 + r00 = {var_u}"
        )));
    }
    let sd_u = var_u.sqrt();
    // Conditional law of v₀ given u: slope · u plus independent noise.
    let cov = r10 - r00;
    let slope = cov / var_u;
    let resid = (r00 - cov * cov / var_u).max(0.0);
    let sd_c = resid.sqrt();
    let breaks = scalar_breaks(loss, s, sd_u, a);
    let mut features = Vec::new();
    let mut log_base = Vec::new();
    for pair in breaks.windows(2) {
        for (u, wu) in gaussian_segment_nodes(0.0, sd_u, pair[0], pair[1], panel) {
            if wu <= 0.0 {
                continue;
            }
            let t = u - a;
            let d1 = loss.d1(t);
            let d2 = loss.d2(t);
            let jac = 1.0 + s * d2;
            if jac <= 0.0 {
                return Err(Error::NumericDomain {
                    what: format!("nonpositive metric factor 1 + s·ℓ″ = {jac}"),
                    where_: format!("matrix tilt node t={t}, s={s}"),
                });
            }
            let r = s * d2 / jac;
            let log_wu = wu.ln() + jac.ln();
            for (&x, &wg) in gh.nodes.iter().zip(&gh.weights) {
                let v0 = slope * u + sd_c * x;
                let v = u + v0;
                features.push(SVector::<f64, N_GENERAL>::from([
                    d1 * d1,
                    v * d1,
                    v0 * d1,
                    psi(v, v0, a),
                    r,
                    -r * r,
                ]));
                log_base.push(log_wu + wg.ln());
            }
        }
    }
    if features.is_empty() {
        return Err(Error::NumericDomain {
            what: "empty quadrature cloud".into(),
            where_: format!("matrix tilt atom a={a}"),
        });
    }
    Ok(AtomCloud { prob: p, features, log_base })
}

// ---------------------------------------------------------------------------
// Tilted moments and the inner concave maximization
// ---------------------------------------------------------------------------

/// `log X`, tilted mean, and tilted covariance of the feature vector for one
/// atom cloud, computed with a max-shift so arbitrarily large exponents stay
/// finite. The covariance is the Hessian of `log X` in the multipliers.
struct TiltMoments<const N: usize> {
    log_x: f64,
    mean: SVector<f64, N>,
    cov: SMatrix<f64, N, N>,
}

fn cloud_log_x<const N: usize>(cloud: &AtomCloud<N>, m: &SVector<f64, N>) -> Result<f64> {
    let mut top = f64::NEG_INFINITY;
    let mut exps = Vec::with_capacity(cloud.features.len());
    for (f, lb) in cloud.features.iter().zip(&cloud.log_base) {
        let e = f.dot(m) + lb;
        if e.is_nan() {
            return Err(Error::NumericDomain {
                what: "NaN exponent in tilted partition function".into(),
                where_: "cloud_log_x".into(),
            });
        }
        top = top.max(e);
        exps.push(e);
    }
    if !top.is_finite() {
        return Err(Error::NumericDomain {
            what: format!("degenerate exponent maximum {top}"),
            where_: "cloud_log_x".into(),
        });
    }
    let z: f64 = exps.iter().map(|e| (e - top).exp()).sum();
    Ok(top + z.ln())
}

fn cloud_moments<const N: usize>(
    cloud: &AtomCloud<N>,
    m: &SVector<f64, N>,
) -> Result<TiltMoments<N>> {
    let mut top = f64::NEG_INFINITY;
    let mut exps = Vec::with_capacity(cloud.features.len());
    for (f, lb) in cloud.features.iter().zip(&cloud.log_base) {
        let e = f.dot(m) + lb;
        if e.is_nan() {
            return Err(Error::NumericDomain {
                what: "NaN exponent in tilted partition function".into(),
                where_: "cloud_moments".into(),
            });
        }
        top = top.max(e);
        exps.push(e);
    }
    if !top.is_finite() {
        return Err(Error::NumericDomain {
            what: format!("degenerate exponent maximum {top}"),
            where_: "cloud_moments".into(),
        });
    }
    let mut z = 0.0;
    for e in &mut exps {
        *e = (*e - top).exp();
        z += *e;
    }
    let mut mean = SVector::<f64, N>::zeros();
    for (f, &e) in cloud.features.iter().zip(&exps) {
        mean += f * (e / z);
    }
    let mut cov = SMatrix::<f64, N, N>::zeros();
    for (f, &e) in cloud.features.iter().zip(&exps) {
        let d = f - mean;
        cov.ger(e / z, &d, &d, 1.0);
    }
    Ok(TiltMoments { log_x: top + z.ln(), mean, cov })
}

/// Inner objective `D(m) = offset + linear·m − Σ_a p_a log X_a(m)`, concave
/// in `m` because each `log X_a` is a log-partition function.
struct InnerProblem<'a, const N: usize> {
    clouds: &'a [AtomCloud<N>],
    linear: SVector<f64, N>,
    offset: f64,
}

impl<const N: usize> InnerProblem<'_, N> {
    fn value(&self, m: &SVector<f64, N>) -> Result<f64> {
        let mut v = self.offset + self.linear.dot(m);
        for c in self.clouds {
            v -= c.prob * cloud_log_x(c, m)?;
        }
        Ok(v)
    }

    fn value_grad_hess(
        &self,
        m: &SVector<f64, N>,
    ) -> Result<(f64, SVector<f64, N>, SMatrix<f64, N, N>)> {
        let mut v = self.offset + self.linear.dot(m);
        let mut g = self.linear;
        let mut h = SMatrix::<f64, N, N>::zeros();
        for c in self.clouds {
            let t = cloud_moments(c, m)?;
            v -= c.prob * t.log_x;
            g -= t.mean * c.prob;
            h -= t.cov * c.prob;
        }
        Ok((v, g, h))
    }
}

struct InnerMax<const N: usize> {
    value: f64,
    m: SVector<f64, N>,
    grad_norm: f64,
    iterations: usize,
    converged: bool,
}

/// Projected Newton ascent of the concave inner objective. The last
/// multiplier (`ζ`) is constrained to be nonnegative; when it is pinned at
/// zero with an inward-pointing gradient its row and column are removed from
/// the Newton system. Backtracking guards each step.
fn maximize_inner<const N: usize>(
    prob: &InnerProblem<'_, N>,
    m0: SVector<f64, N>,
    tol: f64,
    max_iter: usize,
) -> Result<InnerMax<N>> {
    let last = N - 1;
    let mut m = m0;
    m[last] = m[last].max(0.0);
    let (mut val, mut grad, mut hess) = prob.value_grad_hess(&m)?;
    let mut iterations = 0;
    let mut stall = 0usize;
    while iterations < max_iter {
        iterations += 1;
        // A runaway ascent means the requested moments are unattainable and
        // the sup is +infinity; stop burning quadrature passes on it.
        if val > 1e5 || m.norm() > 1e8 {
            return Ok(InnerMax { value: val, m, grad_norm: grad.norm(), iterations, converged: false });
        }
        let active = m[last] <= 0.0 && grad[last] < 0.0;
        let mut pg = grad;
        if active {
            pg[last] = 0.0;
        }
        let gnorm = pg.norm();
        if gnorm <= tol {
            return Ok(InnerMax { value: val, m, grad_norm: gnorm, iterations, converged: true });
        }
        // Newton direction on the (negated, PSD) curvature, with escalating
        // Tikhonov regularization and a gradient fallback.
        let mut h = -hess;
        if active {
            for k in 0..N {
                h[(last, k)] = 0.0;
                h[(k, last)] = 0.0;
            }
            h[(last, last)] = 1.0;
        }
        let scale = 1.0 + h.trace().abs();
        let mut dir = None;
        let mut reg = 1e-12 * scale;
        for _ in 0..10 {
            if let Some(ch) = Cholesky::new(h + SMatrix::<f64, N, N>::identity() * reg) {
                dir = Some(ch.solve(&pg));
                break;
            }
            reg *= 100.0;
        }
        let mut dir = dir.unwrap_or(pg / scale);
        if active {
            dir[last] = 0.0;
        }
        let mut slope = dir.dot(&pg);
        if !slope.is_finite() || slope <= 0.0 {
            dir = pg;
            slope = gnorm * gnorm;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..45 {
            let mut cand = m + dir * step;
            cand[last] = cand[last].max(0.0);
            // Armijo probes need only the value; derivatives are recomputed
            // once at the accepted point.
            match prob.value(&cand) {
                Ok(v2)
                    if v2.is_finite()
                        && v2 >= val + 1e-4 * step * slope - 1e-15 * (1.0 + val.abs()) =>
                {
                    let (v3, g3, h3) = prob.value_grad_hess(&cand)?;
                    // Value plateau with a stubborn gradient marks a supremum
                    // attained only in the limit of infinite tilts; the
                    // plateau value is the answer to working precision.
                    if v3 - val <= 1e-9 * (1.0 + val.abs()) {
                        stall += 1;
                    } else {
                        stall = 0;
                    }
                    m = cand;
                    val = v3;
                    grad = g3;
                    hess = h3;
                    accepted = true;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if accepted && stall >= 4 {
            let mut pg = grad;
            if m[last] <= 0.0 && grad[last] < 0.0 {
                pg[last] = 0.0;
            }
            let gnorm = pg.norm();
            return Ok(InnerMax { value: val, m, grad_norm: gnorm, iterations, converged: gnorm <= tol });
        }
        if !accepted {
            // Line search exhausted: the remaining gradient is pure noise at
            // this quadrature resolution.
            return Ok(InnerMax { value: val, m, grad_norm: gnorm, iterations, converged: false });
        }
    }
    let mut pg = grad;
    if m[last] <= 0.0 && grad[last] < 0.0 {
        pg[last] = 0.0;
    }
    Ok(InnerMax { value: val, m, grad_norm: pg.norm(), iterations, converged: false })
}

// ---------------------------------------------------------------------------
// Scalar-form public operations
// ---------------------------------------------------------------------------

fn check_scale(s: f64, loss: &Loss) -> Result<()> {
    let lmin = loss.curvature_min();
    if s > 0.0 && s.is_finite() && (lmin == 0.0 || s * lmin < 1.0) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "spectral scale s={s} outside (0, {})",
            if lmin == 0.0 { f64::INFINITY } else { 1.0 / lmin }
        )))
    }
}

fn to_vec5(m: &RateMultipliers) -> SVector<f64, N_SCALAR> {
    SVector::from([m.gamma, m.beta[0], m.eta, m.xi, m.zeta])
}

fn from_vec5(v: &SVector<f64, N_SCALAR>) -> RateMultipliers {
    RateMultipliers { gamma: v[0], beta: [v[1], 0.0], eta: v[2], xi: v[3], zeta: v[4] }
}

/// Integrability screen for the scalar tilt: with an unbounded influence
/// function the Gaussian tail must dominate the quadratic exponent.
fn check_integrable(mult: &RateMultipliers, loss: &Loss, rho: f64) -> Result<()> {
    mult.validate()?;
    if mult.beta[1].abs() > 0.0 {
        return Err(Error::InvalidParameter(
            "the scalar reduction carries a single beta component".into(),
        ));
    }
    if loss.d1_sup().is_infinite() {
        if mult.gamma > 0.0 {
            return Err(Error::Domain(
                "positive quadratic tilt with unbounded influence function".into(),
            ));
        }
        if mult.gamma + mult.beta[0] >= 0.5 / (rho * rho) {
            return Err(Error::Domain(
                "tilt exponent is not dominated by the Gaussian tail".into(),
            ));
        }
    }
    Ok(())
}

/// `E_w[log X]` for the scalar tilted partition function at fixed
/// multipliers: `X = ∫ exp{γℓ′(t)² + β·u·ℓ′(t) + ηψ(u, w) + ξr − ζr²}
/// (1 + sℓ″(t)) φ_ρ(u) du`, `t = u − w`, restricted to `1 + sℓ″ > 0`
/// (vacuous for `s < 1/L_min`), averaged over the noise atoms.
pub fn x_integral(
    s: f64,
    rho: f64,
    mult: &RateMultipliers,
    psi: impl Fn(f64, f64) -> f64,
    cfg: &ProblemConfig,
    opts: &RateOptions,
) -> Result<f64> {
    cfg.validate()?;
    opts.validate()?;
    check_scale(s, &cfg.loss)?;
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    check_integrable(mult, &cfg.loss, rho)?;
    let panel = QuadratureGrid::legendre(opts.panel_order)?;
    let m = to_vec5(mult);
    let mut acc = 0.0;
    for &atom in &cfg.noise.atoms {
        let cloud = scalar_cloud(s, rho, atom, &cfg.loss, &psi, &panel)?;
        acc += cloud.prob * cloud_log_x(&cloud, &m)?;
    }
    Ok(acc)
}

/// Whether the level pair `(g, ι)` is reachable by some tilt of the base
/// measure; unreachable levels make the inner supremum `+∞`.
fn scalar_levels_feasible(g: f64, level: f64, loss: &Loss) -> bool {
    if !(g > 0.0) || !g.is_finite() || !level.is_finite() || !(level > 0.0) {
        return false;
    }
    let d1s = loss.d1_sup();
    if d1s.is_finite() && g > d1s * d1s + 1e-12 {
        return false;
    }
    if let Some(flat) = loss.flat_value() {
        if level > flat + 1e-12 {
            return false;
        }
    }
    true
}

fn infeasible_solution() -> InnerSolution {
    InnerSolution {
        value: f64::INFINITY,
        multipliers: RateMultipliers::zero(),
        feasible: false,
        converged: false,
        gradient_norm: f64::INFINITY,
        iterations: 0,
    }
}

/// Supremum over multipliers of the scalar inner objective
/// `γg + ηι + ξ/α − ζ/α + (1/α)log s + (1/2α)(1 + log(αg/ρ²)) − E_w log X`.
pub fn inner_sup(
    s: f64,
    rho: f64,
    g: f64,
    level: f64,
    cfg: &ProblemConfig,
    opts: &RateOptions,
    warm: Option<&RateMultipliers>,
) -> Result<InnerSolution> {
    cfg.validate()?;
    opts.validate()?;
    check_scale(s, &cfg.loss)?;
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    if !scalar_levels_feasible(g, level, &cfg.loss) {
        return Ok(infeasible_solution());
    }
    let panel = QuadratureGrid::legendre(opts.panel_order)?;
    let clouds = scalar_clouds(s, rho, cfg, &panel)?;
    solve_scalar_inner(&clouds, s, rho, g, level, cfg, opts, warm)
}

fn scalar_clouds(
    s: f64,
    rho: f64,
    cfg: &ProblemConfig,
    panel: &QuadratureGrid,
) -> Result<Vec<AtomCloud<N_SCALAR>>> {
    let psi = |u: f64, a: f64| cfg.loss.eval(u - a);
    cfg.noise
        .atoms
        .iter()
        .map(|&atom| scalar_cloud(s, rho, atom, &cfg.loss, &psi, panel))
        .collect()
}

/// Inner supremum on prebuilt clouds; range feasibility must already hold.
#[allow(clippy::too_many_arguments)]
fn solve_scalar_inner(
    clouds: &[AtomCloud<N_SCALAR>],
    s: f64,
    rho: f64,
    g: f64,
    level: f64,
    cfg: &ProblemConfig,
    opts: &RateOptions,
    warm: Option<&RateMultipliers>,
) -> Result<InnerSolution> {
    let alpha = cfg.alpha;
    let rho2 = rho * rho;
    let problem = InnerProblem {
        clouds,
        linear: SVector::from([g, 0.0, level, 1.0 / alpha, -1.0 / alpha]),
        offset: s.ln() / alpha + 0.5 * (1.0 + (alpha * g / rho2).ln()) / alpha,
    };
    let m0 = warm
        .map(to_vec5)
        .unwrap_or_else(|| SVector::from([-0.5 * s * s / rho2, -s / rho2, 0.0, 0.0, 0.0]));
    let sol = maximize_inner(&problem, m0, opts.inner_tol, opts.inner_max_iter)?;
    Ok(InnerSolution {
        value: sol.value,
        multipliers: from_vec5(&sol.m),
        feasible: true,
        converged: sol.converged,
        gradient_norm: sol.grad_norm,
        iterations: sol.iterations,
    })
}

// ---------------------------------------------------------------------------
// Outer minimization over (s, g)
// ---------------------------------------------------------------------------

/// Golden-section minimization of a univariate function on `[lo, hi]`.
/// Returns the best abscissa/value pair among the probed interior points.
pub fn golden_min(
    mut f: impl FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    xtol: f64,
    max_iter: usize,
) -> (f64, f64) {
    let inv_phi = 0.5 * (5.0_f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let (mut best_x, mut best_f) = if fc <= fd { (c, fc) } else { (d, fd) };
    for _ in 0..max_iter {
        if (b - a).abs() <= xtol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        let (x, v) = if fc <= fd { (c, fc) } else { (d, fd) };
        if v < best_f {
            best_x = x;
            best_f = v;
        }
    }
    (best_x, best_f)
}

/// Admissible `(s, g)` rectangle for the outer search.
fn outer_ranges(loss: &Loss, rho: f64, noise_m2: f64, opts: &RateOptions) -> (f64, f64, f64, f64) {
    let lmin = loss.curvature_min();
    let s_hi = if lmin > 0.0 {
        (1.0 - opts.s_margin) / lmin
    } else {
        // Unbounded-curvature losses have no hard cap; a generous heuristic
        // window covers every regime the experiments touch.
        50.0_f64.max(4.0 * rho)
    };
    let d1s = loss.d1_sup();
    let g_hi = if d1s.is_finite() {
        d1s * d1s
    } else {
        50.0 * (rho * rho + noise_m2).max(1.0)
    };
    (opts.s_floor, s_hi, opts.a_l * opts.a_l, g_hi)
}

/// Coordinate-descent outer minimization of `(s, g) ↦ inner_sup` at fixed
/// `(ρ, ι)`. Numeric failures inside a probe are treated as `+∞` (the probe
/// is simply not competitive); parameter validation happens before entry.
fn optimize_scalar_outer(
    rho: f64,
    level: f64,
    cfg: &ProblemConfig,
    opts: &RateOptions,
    hint: Option<(f64, f64)>,
) -> Result<RateCell> {
    cfg.validate()?;
    opts.validate()?;
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    let (s_lo, s_hi, g_lo, g_hi) = outer_ranges(&cfg.loss, rho, cfg.noise.second_moment, opts);
    if !scalar_levels_feasible(g_lo.max(1e-12), level, &cfg.loss) {
        return Err(Error::InvalidParameter(format!(
            "loss level {level} is outside the attainable range"
        )));
    }
    let mut warm: Option<RateMultipliers> = None;
    let mut cached: Option<(f64, Vec<AtomCloud<N_SCALAR>>)> = None;
    let panel = QuadratureGrid::legendre(opts.panel_order)?;

    // Each sweep's g line search scans the full g range, so a start is
    // parameterized by its s coordinate alone; a hint seeds the first one.
    let mut starts: Vec<f64> = Vec::new();
    if let Some((s, _g)) = hint {
        starts.push(s.clamp(s_lo * 1.01, s_hi * 0.999));
    }
    let rel = [0.35, 0.75, 0.5, 0.15];
    for &rs in rel.iter().take(opts.outer_starts) {
        starts.push(s_lo + rs * (s_hi - s_lo));
    }

    let mut best: Option<(f64, f64, f64)> = None;
    for &s0 in &starts {
        let mut s = s0;
        let mut g = f64::NAN;
        let mut val = f64::INFINITY;
        for _ in 0..opts.outer_max_sweeps {
            let prev = val;
            let (g_new, _) = golden_min(
                |gg| probe(s, rho, gg, level, cfg, opts, &panel, &mut warm, &mut cached),
                g_lo,
                g_hi,
                opts.outer_xtol * (g_hi - g_lo),
                80,
            );
            g = g_new;
            let (s_new, v_new) = golden_min(
                |ss| probe(ss, rho, g, level, cfg, opts, &panel, &mut warm, &mut cached),
                s_lo,
                s_hi,
                opts.outer_xtol * (s_hi - s_lo),
                80,
            );
            let s_moved = (s_new - s).abs() > 0.5 * opts.outer_xtol * (s_hi - s_lo);
            s = s_new;
            val = v_new;
            // The g line rescans its full range each sweep, so a stationary
            // s coordinate means the next sweep would repeat this one.
            if (prev - val).abs() <= opts.outer_value_tol * (1.0 + val.abs()) || !s_moved {
                break;
            }
        }
        if !val.is_finite() {
            continue;
        }
        if best.map_or(true, |(bv, _, _)| val < bv) {
            best = Some((val, s, g));
        }
    }
    let Some((_, s_best, g_best)) = best else {
        return Err(Error::NumericDomain {
            what: "every outer start diverged".into(),
            where_: format!("rate cell rho={rho}, level={level}"),
        });
    };
    // Re-solve at the winner so the reported multipliers, convergence flag
    // and value all refer to the same point.
    let sol = inner_sup(s_best, rho, g_best, level, cfg, opts, warm.as_ref())?;
    Ok(RateCell {
        value: sol.value,
        vars: RateInnerVars { s: s_best, g: g_best, rho, level },
        multipliers: sol.multipliers,
        converged: sol.converged,
    })
}

/// Single outer probe: inner supremum with warm-started multipliers and a
/// cloud cache keyed on `s` (a `g` line search at fixed `s` reuses it);
/// numeric failures rank the probe as `+∞` rather than aborting the search.
#[allow(clippy::too_many_arguments)]
fn probe(
    s: f64,
    rho: f64,
    g: f64,
    level: f64,
    cfg: &ProblemConfig,
    opts: &RateOptions,
    panel: &QuadratureGrid,
    warm: &mut Option<RateMultipliers>,
    cached: &mut Option<(f64, Vec<AtomCloud<N_SCALAR>>)>,
) -> f64 {
    if !scalar_levels_feasible(g, level, &cfg.loss) {
        return f64::INFINITY;
    }
    if cached.as_ref().map_or(true, |(cs, _)| *cs != s) {
        match scalar_clouds(s, rho, cfg, panel) {
            Ok(c) => *cached = Some((s, c)),
            Err(_) => return f64::INFINITY,
        }
    }
    let clouds = &cached.as_ref().expect("cache populated above").1;
    match solve_scalar_inner(clouds, s, rho, g, level, cfg, opts, warm.as_ref()) {
        Ok(sol) => {
            if sol.feasible && sol.value.is_finite() && sol.converged {
                *warm = Some(sol.multipliers.clone());
            }
            sol.value
        }
        Err(_) => f64::INFINITY,
    }
}

/// Rate value `Φ(ρ; ι)` for a bounded-influence loss via the translation
/// reduction: outer inf over `(s, g)`, inner sup over multipliers.
pub fn phi_tuk(rho: f64, iota: f64, cfg: &ProblemConfig) -> Result<f64> {
    phi_tuk_with(rho, iota, cfg, &RateOptions::default(), None).map(|c| c.value)
}

/// As [`phi_tuk`], returning the full optimized cell and accepting an outer
/// warm start `(s, g)` (e.g. the neighboring grid cell's minimizer).
pub fn phi_tuk_with(
    rho: f64,
    iota: f64,
    cfg: &ProblemConfig,
    opts: &RateOptions,
    hint: Option<(f64, f64)>,
) -> Result<RateCell> {
    let Some(flat) = cfg.loss.flat_value() else {
        return Err(Error::InvalidParameter(
            "the translation-reduced rate requires a bounded (saturating) loss".into(),
        ));
    };
    if !(iota > 0.0 && iota <= flat + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "loss level must lie in (0, {flat:.6}], got {iota}"
        )));
    }
    optimize_scalar_outer(rho, iota, cfg, opts, hint)
}

// ---------------------------------------------------------------------------
// Surface tabulation and derived markers
// ---------------------------------------------------------------------------

/// Tabulate `Φ` over a `(ρ, ι)` grid and extract the derived markers.
///
/// Loss levels above the saturation value are dropped (the rate is `+∞`
/// there). `ι₀` is located at the first sign change of `ι ↦ min_ρ Φ(·; ι)`
/// along the grid, then bisection-refined using only the `ρ` points near the
/// minimizing columns; when the minimum never turns negative the last grid
/// level is reported. Rows are independent and evaluated in parallel; within
/// a row cells share outer warm starts.
pub fn phi_curves(
    cfg: &ProblemConfig,
    rho_grid: &[f64],
    iota_grid: &[f64],
    opts: &RateOptions,
) -> Result<RateSurface> {
    cfg.validate()?;
    opts.validate()?;
    let Some(flat) = cfg.loss.flat_value() else {
        return Err(Error::InvalidParameter(
            "the rate surface requires a bounded (saturating) loss".into(),
        ));
    };
    let mut rho_grid: Vec<f64> = rho_grid.iter().copied().filter(|r| *r > 0.0).collect();
    rho_grid.sort_by(f64::total_cmp);
    rho_grid.dedup();
    let mut iota_grid: Vec<f64> = iota_grid
        .iter()
        .copied()
        .filter(|i| *i > 0.0 && *i <= flat * (1.0 + 1e-12))
        .collect();
    iota_grid.sort_by(f64::total_cmp);
    iota_grid.dedup();
    if rho_grid.is_empty() || iota_grid.is_empty() {
        return Err(Error::InvalidParameter("empty rate-surface grid".into()));
    }

    // A stable fixed point, when one exists, predicts the outer minimizer;
    // threading it as a warm start accelerates every nearby cell.
    let fp_hint = se_solve(
        cfg,
        crate::se::FixedPointState::default_for(&cfg.loss),
        &crate::se::SeOptions::default(),
    )
    .ok()
    .filter(|fp| fp.stable)
        .map(|fp| {
            let g: f64 = fp
                .nu_star
                .samples
                .iter()
                .zip(&fp.nu_star.d1_values)
                .map(|(s, d1)| s.3 * d1 * d1)
                .sum();
            (fp.state.s, g)
        });

    let rows: Vec<(Vec<f64>, Vec<(f64, f64)>)> = rho_grid
        .par_iter()
        .map(|&rho| {
            let mut vals = Vec::with_capacity(iota_grid.len());
            let mut mins = Vec::with_capacity(iota_grid.len());
            let mut hint = fp_hint;
            for &iota in &iota_grid {
                let cell = phi_tuk_with(rho, iota, cfg, opts, hint)?;
                hint = Some((cell.vars.s, cell.vars.g));
                vals.push(cell.value);
                mins.push((cell.vars.s, cell.vars.g));
            }
            Ok((vals, mins))
        })
        .collect::<Result<_>>()?;
    let phi: Vec<Vec<f64>> = rows.iter().map(|(v, _)| v.clone()).collect();
    let cell_hints: Vec<Vec<(f64, f64)>> = rows.into_iter().map(|(_, m)| m).collect();

    // Column minima over rho and the first sign change along iota.
    let n_rho = rho_grid.len();
    let n_iota = iota_grid.len();
    let col_min = |j: usize| -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for i in 0..n_rho {
            if phi[i][j] < best.0 {
                best = (phi[i][j], i);
            }
        }
        best
    };
    let mut crossing: Option<usize> = None;
    for j in 0..n_iota {
        if col_min(j).0 <= 0.0 {
            crossing = Some(j);
            break;
        }
    }
    let iota0 = match crossing {
        None => *iota_grid.last().unwrap(),
        Some(0) => iota_grid[0],
        Some(j) => {
            // Bisect between the last positive and first nonpositive grid
            // columns, minimizing over the rho points near both argmins.
            let (_, i_lo) = col_min(j - 1);
            let (_, i_hi) = col_min(j);
            let mut idx: Vec<usize> = Vec::new();
            for base in [i_lo, i_hi] {
                for d in -2i64..=2 {
                    let k = base as i64 + d;
                    if k >= 0 && (k as usize) < n_rho {
                        idx.push(k as usize);
                    }
                }
            }
            idx.sort_unstable();
            idx.dedup();
            let (mut lo, mut hi) = (iota_grid[j - 1], iota_grid[j]);
            while hi - lo > 2e-4 {
                let mid = 0.5 * (lo + hi);
                let mut m = f64::INFINITY;
                for &i in &idx {
                    let hint = Some(cell_hints[i][j - 1]);
                    let v = phi_tuk_with(rho_grid[i], mid, cfg, opts, hint)?.value;
                    m = m.min(v);
                }
                if m > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    };

    // Censored envelope and its refined argmin.
    let cols: Vec<usize> =
        (0..n_iota).filter(|&j| iota_grid[j] <= iota0 + 1e-15).collect();
    let cols = if cols.is_empty() { vec![0] } else { cols };
    let mut phi0: Vec<(f64, usize)> = Vec::with_capacity(n_rho);
    for row in phi.iter() {
        let mut best = (f64::INFINITY, cols[0]);
        for &j in &cols {
            if row[j] < best.0 {
                best = (row[j], j);
            }
        }
        phi0.push(best);
    }
    let i_star = (0..n_rho).min_by(|&a, &b| phi0[a].0.total_cmp(&phi0[b].0)).unwrap();
    let j_star = phi0[i_star].1;
    let lo = if i_star == 0 { rho_grid[0] } else { rho_grid[i_star - 1] };
    let hi = if i_star + 1 == n_rho { rho_grid[n_rho - 1] } else { rho_grid[i_star + 1] };
    let rho_star = if hi > lo {
        let mut hint = Some(cell_hints[i_star][j_star]);
        let (x, _) = golden_min(
            |r| match phi_tuk_with(r, iota_grid[j_star], cfg, opts, hint) {
                Ok(cell) => {
                    hint = Some((cell.vars.s, cell.vars.g));
                    cell.value
                }
                Err(_) => f64::INFINITY,
            },
            lo,
            hi,
            1e-4 * (hi - lo),
            60,
        );
        x
    } else {
        rho_grid[i_star]
    };

    Ok(RateSurface { rho_grid, iota_grid, phi, iota0, rho_star })
}

// ---------------------------------------------------------------------------
// Matrix-order form
// ---------------------------------------------------------------------------

/// Rate value for the general matrix-order constraint: `R` is the 2×2 second
/// moment of `(v, v₀)` with `R[(1,1)]` pinned to the squared signal norm,
/// `level` the constrained value of `E ψ(v, v₀, w)`, and the ridge weight is
/// taken from `cfg.lambda`. Reduces to the scalar form on the translation
/// manifold `r₁₀ = r₀₀` with `ψ(v, v₀, w) = ℓ(v − v₀ − w)` and `λ = 0`.
pub fn phi_fin(
    r: &Matrix2<f64>,
    level: f64,
    psi: &(dyn Fn(f64, f64, f64) -> f64 + Sync),
    cfg: &ProblemConfig,
    opts: &RateOptions,
) -> Result<f64> {
    cfg.validate()?;
    opts.validate()?;
    let (r11, r10, r01, r00) = (r[(0, 0)], r[(0, 1)], r[(1, 0)], r[(1, 1)]);
    let scale = r11.abs().max(r00.abs()).max(1.0);
    if (r10 - r01).abs() > 1e-12 * scale {
        return Err(Error::InvalidParameter(format!(
            "order matrix must be symmetric, got r10={r10}, r01={r01}"
        )));
    }
    if (r00 - cfg.r00).abs() > 1e-9 * scale {
        return Err(Error::InvalidParameter(format!(
            "r00={r00} must equal the pinned squared signal norm {}",
            cfg.r00
        )));
    }
    let schur = r11 - r10 * r10 / r00;
    if !(r00 > 0.0 && schur > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "order matrix must be positive definite (r00={r00}, Schur={schur})"
        )));
    }
    let var_u = r11 - 2.0 * r10 + r00;
    if !(var_u > 1e-12 * scale) {
        return Err(Error::InvalidParameter(
            "degenerate difference coordinate: r11 - 2 r10 + r00 must be positive".into(),
        ));
    }

    let alpha = cfg.alpha;
    let lambda = cfg.lambda;
    let (s_lo, s_hi, g_lo, g_hi) =
        outer_ranges(&cfg.loss, var_u.sqrt(), cfg.noise.second_moment, opts);
    let panel = QuadratureGrid::legendre(opts.panel_order)?;
    let gh = QuadratureGrid::hermite(opts.v0_order)?;

    // Clouds depend on s only; cache them across the g line searches.
    let mut cached: Option<(f64, Vec<AtomCloud<N_GENERAL>>)> = None;
    let mut warm: Option<SVector<f64, N_GENERAL>> = None;
    let probe_fin = |s: f64,
                     g: f64,
                     warm: &mut Option<SVector<f64, N_GENERAL>>,
                     cached: &mut Option<(f64, Vec<AtomCloud<N_GENERAL>>)>|
     -> f64 {
        if cached.as_ref().map_or(true, |(cs, _)| *cs != s) {
            let built: Result<Vec<_>> = cfg
                .noise
                .atoms
                .iter()
                .map(|&atom| general_cloud(s, r11, r10, r00, atom, &cfg.loss, psi, &panel, &gh))
                .collect();
            match built {
                Ok(c) => *cached = Some((s, c)),
                Err(_) => return f64::INFINITY,
            }
        }
        let clouds = &cached.as_ref().unwrap().1;
        let problem = InnerProblem {
            clouds,
            linear: SVector::from([
                g,
                -lambda * r11,
                -lambda * r10,
                level,
                1.0 / alpha,
                -1.0 / alpha,
            ]),
            offset: s.ln() / alpha - lambda * s + 0.5 * (1.0 + (alpha * g / schur).ln()) / alpha,
        };
        let m0 = warm.unwrap_or_else(|| {
            SVector::from([
                -0.5 * s * s / schur,
                -s / schur,
                s / schur * (r10 / r00),
                0.0,
                0.0,
                0.0,
            ])
        });
        match maximize_inner(&problem, m0, opts.inner_tol, opts.inner_max_iter) {
            Ok(sol) => {
                if sol.value.is_finite() && sol.converged {
                    *warm = Some(sol.m);
                }
                sol.value
            }
            Err(_) => f64::INFINITY,
        }
    };

    // Starts are parameterized by s alone: each sweep's g line search scans
    // the full g range before s moves.
    let starts = [0.35, 0.6];
    let mut best = f64::INFINITY;
    for &rs in &starts {
        let mut s = s_lo + rs * (s_hi - s_lo);
        let mut val = f64::INFINITY;
        for _ in 0..opts.outer_max_sweeps {
            let prev = val;
            let (g, _) = golden_min(
                |gg| probe_fin(s, gg, &mut warm, &mut cached),
                g_lo,
                g_hi,
                opts.outer_xtol * (g_hi - g_lo),
                80,
            );
            let (s_new, v_new) = golden_min(
                |ss| probe_fin(ss, g, &mut warm, &mut cached),
                s_lo,
                s_hi,
                opts.outer_xtol * (s_hi - s_lo),
                80,
            );
            let s_moved = (s_new - s).abs() > 0.5 * opts.outer_xtol * (s_hi - s_lo);
            s = s_new;
            val = v_new;
            if (prev - val).abs() <= opts.outer_value_tol * (1.0 + val.abs()) || !s_moved {
                break;
            }
        }
        if val < best {
            best = val;
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Trivialization diagnostics
// ---------------------------------------------------------------------------

/// Diagnostics for the large-`α` trivialization statements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrivializationReport {
    /// `(L_min / L_∨)²`: below this oversampling nothing is claimed.
    pub alpha0: f64,
    /// `1 / (2 L_∨)`: the spectral-scale pivot of the near-trivial set.
    pub tau0: f64,
    /// Whether `(R, ν)` lies in the near-trivial set
    /// `Schur(R, r₀₀) ≤ τ₀² E_ν[ℓ′²]`.
    pub in_trivial_set: bool,
    /// Log-determinant lower bound pivot `B⋆(ν, R)`.
    pub b_star: f64,
    /// Gradient-term lower bound `G⋆(R)`.
    pub g_star: f64,
    /// Smallest oversampling ratio certified by the closed-form sufficient
    /// condition; `None` when the hypothesis fails (some `β` in the window
    /// gives `E[ℓ″(βZ − w)] ≤ 0`) or no finite root exists.
    pub alpha_star: Option<f64>,
}

/// Evaluate the trivialization constants and certificates at a candidate
/// pair: the translation-manifold order matrix built from `rho2` and a
/// curvature measure `nu` (typically a proximal pushforward).
pub fn trivialization_diagnostics(
    cfg: &ProblemConfig,
    rho2: f64,
    nu: &CurvatureMeasure,
    opts: &RateOptions,
) -> Result<TrivializationReport> {
    cfg.validate()?;
    opts.validate()?;
    if !(rho2 > 0.0 && rho2.is_finite()) {
        return Err(Error::InvalidParameter(format!("rho2 must be positive, got {rho2}")));
    }
    let loss = &cfg.loss;
    let l_or = loss.curvature_sup();
    let alpha0 = (loss.curvature_min() / l_or).powi(2);
    let tau0 = 0.5 / l_or;

    let mut e_d1sq = 0.0;
    let mut e_d2 = 0.0;
    let mut e_v_d1 = 0.0;
    let mut e_v0_d1 = 0.0;
    for ((sample, d1), d2) in nu.samples.iter().zip(&nu.d1_values).zip(&nu.d2_values) {
        let (v, v0, _w, weight) = *sample;
        e_d1sq += weight * d1 * d1;
        e_d2 += weight * d2;
        e_v_d1 += weight * v * d1;
        e_v0_d1 += weight * v0 * d1;
    }
    if !(e_d1sq > 0.0) {
        return Err(Error::NumericDomain {
            what: format!("E[ℓ′²] = {e_d1sq} under the supplied measure"),
            where_: "trivialization_diagnostics".into(),
        });
    }

    // Translation-manifold order matrix.
    let r00 = cfg.r00;
    let (r11, r10) = (r00 + rho2, r00);
    let schur = rho2;
    let lambda = cfg.lambda;
    let in_trivial_set = schur <= tau0 * tau0 * e_d1sq + 1e-12;
    let b_star = tau0 * (e_d2 + lambda) + 0.5 * (schur / (tau0 * tau0 * e_d1sq)).ln();

    let num = {
        let n1 = e_v_d1 + lambda * r11;
        let n2 = e_v0_d1 + lambda * r10;
        n1 * n1 + n2 * n2
    };
    let op_norm = 0.5 * ((r11 + r00) + ((r11 - r00).powi(2) + 4.0 * r10 * r10).sqrt());
    let trace = r11 + r00;
    let denom_root = schur.sqrt() / tau0 + l_or * trace.sqrt();
    let g_star = num / (2.0 * op_norm * denom_root * denom_root);

    let alpha_star = alpha_star_certificate(cfg, opts)?;

    Ok(TrivializationReport { alpha0, tau0, in_trivial_set, b_star, g_star, alpha_star })
}

/// Closed-form sufficient oversampling: the smallest `α ≥ 1` with
/// `α > 9 L_∨² / E[ℓ″(βZ − w)]² · log(4 e β² L_∨² α² / 𝖺_L²)` simultaneously
/// over a grid of `β` in `[𝖺_L / (2 L_∨), 𝖠_R]`. Fails (returns `None`) when
/// some `β` gives a nonpositive mean curvature, or no root below `10¹²`.
fn alpha_star_certificate(cfg: &ProblemConfig, opts: &RateOptions) -> Result<Option<f64>> {
    let loss = &cfg.loss;
    let l_or = loss.curvature_sup();
    let panel = QuadratureGrid::legendre(opts.panel_order)?;
    let beta_lo = opts.a_l / (2.0 * l_or);
    let beta_hi = opts.a_r;
    let n = opts.beta_grid;
    let mut terms: Vec<(f64, f64)> = Vec::with_capacity(n); // (C_beta, D_beta)
    for k in 0..n {
        let beta = beta_lo + (beta_hi - beta_lo) * k as f64 / (n - 1) as f64;
        let mut mean_curv = 0.0;
        for &(a, p) in &cfg.noise.atoms {
            let e = match loss.flat_cutoff() {
                Some(kappa) => expect_kinked(
                    -a,
                    beta,
                    &[-kappa, kappa],
                    Tail::Zero,
                    Tail::Zero,
                    &panel,
                    |x| loss.d2(x),
                )?,
                None => expect_kinked(-a, beta, &[], Tail::Numeric, Tail::Numeric, &panel, |x| {
                    loss.d2(x)
                })?,
            };
            mean_curv += p * e;
        }
        if mean_curv <= 1e-12 {
            return Ok(None);
        }
        let c = 9.0 * l_or * l_or / (mean_curv * mean_curv);
        let d = 4.0 * std::f64::consts::E * beta * beta * l_or * l_or / (opts.a_l * opts.a_l);
        terms.push((c, d));
    }
    let gap = |alpha: f64| -> f64 {
        let h = terms
            .iter()
            .map(|&(c, d)| c * (d * alpha * alpha).ln())
            .fold(f64::NEG_INFINITY, f64::max);
        alpha - h
    };
    if gap(1.0 + 1e-9) > 0.0 {
        return Ok(Some(1.0 + 1e-9));
    }
    let mut hi = 2.0;
    while gap(hi) <= 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(None);
        }
    }
    let mut lo = (hi / 2.0).max(1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-10 * hi {
            break;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

// ---------------------------------------------------------------------------
// Measure-space rate functionals
// ---------------------------------------------------------------------------

/// Gaussian conditional law `v | v₀ ~ N(slope · v₀, var)`; the only family of
/// first-layer measures the closed-form rate evaluation supports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianConditional {
    pub slope: f64,
    pub var: f64,
}

/// First-layer rate `Φ_μ`: `(1/α)` times the KL divergence of the Gaussian
/// conditional from the reference conditional of `N(0, R)`, averaged over
/// the pinned marginal `v₀ ~ N(0, r₀₀)`.
pub fn phi_mu(mu: &GaussianConditional, r11: f64, r10: f64, r00: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must exceed 1, got {alpha}")));
    }
    if !(r00 > 0.0) || !(mu.var > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "variances must be positive (r00={r00}, var={})",
            mu.var
        )));
    }
    let schur = r11 - r10 * r10 / r00;
    if !(schur > 0.0) {
        return Err(Error::InvalidParameter(format!("Schur complement must be positive: {schur}")));
    }
    let ratio = mu.var / schur;
    let slope_gap = mu.slope - r10 / r00;
    Ok((0.5 * (ratio - 1.0 - ratio.ln()) + 0.5 * slope_gap * slope_gap * r00 / schur) / alpha)
}

/// Parameters of a proximal pushforward measure: the law of
/// `prox_{sℓ(·−w)}(z̃)` with `z̃ ~ N(0, ρ²)`, jointly with the noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxFamily {
    pub rho2: f64,
    pub s: f64,
}

/// Second-layer rate `Φ_ν` split into its decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiNuParts {
    pub value: f64,
    /// Conditional KL of the family measure from the evaluation pushforward.
    pub kl: f64,
    /// Fisher-type penalty `(1/2α) F_ν(α s² E[ℓ′²] / Schur)`.
    pub fisher: f64,
    /// The admissibility check sat exactly on the replicon boundary (resolved
    /// with a non-strict comparison and a 1e−12 margin).
    pub at_replicon_boundary: bool,
}

/// `F_ν(x) = log x − x + 1`: nonpositive, zero only at `x = 1`.
pub fn f_nu(x: f64) -> f64 {
    x.ln() - x + 1.0
}

/// Second-layer rate `Φ_ν(ν; R, s)` for `ν` in the proximal pushforward
/// family, against the translation-manifold order matrix with Schur
/// complement `rho2` and spectral scale `s`.
///
/// Decomposition: conditional KL between the family density and the
/// evaluation-parameter pushforward density (quadrature of the log-ratio),
/// plus zero for the pinned-marginal KL (the family fixes `v₀ ~ N(0, r₀₀)`),
/// plus the Fisher-type term. Requires `s` inside the admissible set of the
/// family measure: `s < 1/L₀(ν)` and the replicon bound at most one.
pub fn phi_nu(
    family: &ProxFamily,
    rho2: f64,
    s: f64,
    cfg: &ProblemConfig,
    opts: &RateOptions,
) -> Result<PhiNuParts> {
    cfg.validate()?;
    opts.validate()?;
    check_scale(family.s, &cfg.loss)?;
    check_scale(s, &cfg.loss)?;
    if !(family.rho2 > 0.0 && rho2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "variances must be positive (family rho2={}, rho2={rho2})",
            family.rho2
        )));
    }
    let loss = &cfg.loss;
    let panel = QuadratureGrid::legendre(opts.panel_order)?;
    let joint = JointGrid::with_order(DEFAULT_ORDER_1D, cfg.noise.clone())?;
    let nu =
        CurvatureMeasure::from_prox_pushforward(loss, cfg.alpha, family.s, family.rho2, &joint, &panel)?;

    // Admissible-scale set of the family measure.
    if nu.l0 > 0.0 && s >= 1.0 / nu.l0 {
        return Err(Error::Domain(format!(
            "scale s={s} at or beyond the curvature cap 1/L₀ = {}",
            1.0 / nu.l0
        )));
    }
    let e3 = replicon_e3(s, &nu)?;
    if e3 > 1.0 + 1e-12 {
        return Err(Error::Domain(format!(
            "scale s={s} violates the replicon admissibility bound (E = {e3:.6})"
        )));
    }
    let at_replicon_boundary = (e3 - 1.0).abs() <= 1e-12;

    // Conditional KL between pushforward densities, sampled through the
    // family's proximal coordinates (kinks where the prox hits saturation).
    let rho_f = family.rho2.sqrt();
    let mut kl = 0.0;
    for &(a, p) in &cfg.noise.atoms {
        let breaks: Vec<f64> = match loss.flat_cutoff() {
            Some(kappa) => vec![a - kappa, a + kappa],
            None => vec![],
        };
        let term = expect_kinked(
            0.0,
            rho_f,
            &breaks,
            Tail::Numeric,
            Tail::Numeric,
            &panel,
            |zt| {
                let log_ratio = prox(zt, family.s, loss, 0.0, a).and_then(|px| {
                    let v = px.value;
                    let num = prox_density(v, family.s, family.rho2, loss, 0.0, a)?;
                    let den = prox_density(v, s, rho2, loss, 0.0, a)?;
                    Ok(num.ln() - den.ln())
                });
                log_ratio.unwrap_or(f64::NAN)
            },
        )?;
        kl += p * term;
    }

    let e_d1sq: f64 =
        nu.samples.iter().zip(&nu.d1_values).map(|(smp, d1)| smp.3 * d1 * d1).sum();
    let fisher = f_nu(cfg.alpha * s * s * e_d1sq / rho2) / (2.0 * cfg.alpha);
    Ok(PhiNuParts { value: kl + fisher, kl, fisher, at_replicon_boundary })
}

/// Combined measure-space rate `Φ_μ + Φ_ν` on the translation manifold.
pub fn phi_measures(
    mu: &GaussianConditional,
    family: &ProxFamily,
    rho2: f64,
    s: f64,
    cfg: &ProblemConfig,
    opts: &RateOptions,
) -> Result<f64> {
    let r00 = cfg.r00;
    let a = phi_mu(mu, r00 + rho2, r00, r00, cfg.alpha)?;
    let b = phi_nu(family, rho2, s, cfg, opts)?;
    Ok(a + b.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se::{se_solve, FixedPointSolution, FixedPointState, SeOptions};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tukey_cfg(alpha: f64) -> ProblemConfig {
        ProblemConfig::new(alpha, 2.73, Loss::tukey(1.0).unwrap()).unwrap()
    }

    fn quad_cfg(alpha: f64) -> ProblemConfig {
        ProblemConfig::new(alpha, 2.73, Loss::quadratic()).unwrap()
    }

    fn fixed_point(cfg: &ProblemConfig) -> FixedPointSolution {
        let fp =
            se_solve(cfg, FixedPointState::default_for(&cfg.loss), &SeOptions::default()).unwrap();
        assert!(fp.stable, "expected a stable fixed point at alpha={}", cfg.alpha);
        fp
    }

    /// `(E[ℓ′²], E[ℓ(v−w)])` under the fixed point's pushforward measure.
    fn fp_levels(fp: &FixedPointSolution, loss: &Loss) -> (f64, f64) {
        fp.risk_levels(loss)
    }

    /// Noise-averaged `E[ℓ″(u − w)]` for `u ~ N(0, ρ²)`, via kink-aware
    /// quadrature independent of the cloud machinery.
    fn mean_curvature(cfg: &ProblemConfig, rho: f64) -> f64 {
        let panel = QuadratureGrid::legendre(DEFAULT_PANEL_ORDER).unwrap();
        let kappa = cfg.loss.flat_cutoff().unwrap();
        cfg.noise
            .atoms
            .iter()
            .map(|&(a, p)| {
                p * expect_kinked(
                    -a,
                    rho,
                    &[-kappa, kappa],
                    Tail::Zero,
                    Tail::Zero,
                    &panel,
                    |t| cfg.loss.d2(t),
                )
                .unwrap()
            })
            .sum()
    }

    #[test]
    fn options_validation_rejects_bad_knobs() {
        assert!(RateOptions::default().validate().is_ok());
        let mut o = RateOptions::default();
        o.a_l = 3.0; // above a_r
        assert!(o.validate().is_err());
        let mut o = RateOptions::default();
        o.s_margin = 1.0;
        assert!(o.validate().is_err());
        let mut o = RateOptions::default();
        o.beta_grid = 1;
        assert!(o.validate().is_err());
        let parsed: RateOptions = serde_json::from_str("{}").unwrap();
        assert_eq!(parsed, RateOptions::default());
        assert!(serde_json::from_str::<RateOptions>("{\"bogus\": 1}").is_err());
    }

    #[test]
    fn x_integral_quadratic_zero_multipliers_is_log_one_plus_s() {
        let cfg = quad_cfg(4.0);
        let opts = RateOptions::default();
        let s = 0.37;
        let psi = |u: f64, a: f64| cfg.loss.eval(u - a);
        let v = x_integral(s, 0.8, &RateMultipliers::zero(), psi, &cfg, &opts).unwrap();
        assert_abs_diff_eq!(v, (1.0 + s).ln(), epsilon = 1e-10);
    }

    #[test]
    fn x_integral_tukey_zero_multipliers_matches_curvature_mean() {
        let cfg = tukey_cfg(8.0);
        let opts = RateOptions::default();
        let (s, rho) = (0.39, 0.228);
        let panel = QuadratureGrid::legendre(DEFAULT_PANEL_ORDER).unwrap();
        let kappa = cfg.loss.flat_cutoff().unwrap();
        let mut oracle = 0.0;
        for &(a, p) in &cfg.noise.atoms {
            let e_d2 = expect_kinked(
                -a,
                rho,
                &[-kappa, kappa],
                Tail::Zero,
                Tail::Zero,
                &panel,
                |t| cfg.loss.d2(t),
            )
            .unwrap();
            oracle += p * (1.0 + s * e_d2).ln();
        }
        let psi = |u: f64, a: f64| cfg.loss.eval(u - a);
        let v = x_integral(s, rho, &RateMultipliers::zero(), psi, &cfg, &opts).unwrap();
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-9);
    }

    #[test]
    fn x_integral_xi_derivative_matches_finite_difference() {
        let cfg = tukey_cfg(8.0);
        let opts = RateOptions::default();
        let (s, rho) = (0.39, 0.228);
        let panel = QuadratureGrid::legendre(DEFAULT_PANEL_ORDER).unwrap();
        let kappa = cfg.loss.flat_cutoff().unwrap();
        // At zero multipliers r·(1 + sℓ″) = sℓ″, so ∂_ξ log X = sE[ℓ″]/X.
        let mut analytic = 0.0;
        for &(a, p) in &cfg.noise.atoms {
            let e_d2 = expect_kinked(
                -a,
                rho,
                &[-kappa, kappa],
                Tail::Zero,
                Tail::Zero,
                &panel,
                |t| cfg.loss.d2(t),
            )
            .unwrap();
            analytic += p * s * e_d2 / (1.0 + s * e_d2);
        }
        let psi = |u: f64, a: f64| cfg.loss.eval(u - a);
        let h = 1e-5;
        let mut hi = RateMultipliers::zero();
        hi.xi = h;
        let mut lo = RateMultipliers::zero();
        lo.xi = -h;
        let fd = (x_integral(s, rho, &hi, psi, &cfg, &opts).unwrap()
            - x_integral(s, rho, &lo, psi, &cfg, &opts).unwrap())
            / (2.0 * h);
        assert_abs_diff_eq!(fd, analytic, epsilon = 1e-6);
    }

    #[test]
    fn x_integral_guards_unbounded_tilts() {
        let opts = RateOptions::default();
        let quad = quad_cfg(4.0);
        let psi_q = |u: f64, a: f64| quad.loss.eval(u - a);
        let mut m = RateMultipliers::zero();
        m.gamma = 0.1;
        assert!(matches!(
            x_integral(0.4, 0.8, &m, psi_q, &quad, &opts),
            Err(Error::Domain(_))
        ));
        let mut m = RateMultipliers::zero();
        m.beta[0] = 1.0; // 1/(2·0.64) ≈ 0.78 < 1: tail not dominated
        assert!(matches!(
            x_integral(0.4, 0.8, &m, psi_q, &quad, &opts),
            Err(Error::Domain(_))
        ));
        // Bounded influence: any gamma is integrable.
        let tuk = tukey_cfg(8.0);
        let psi_t = |u: f64, a: f64| tuk.loss.eval(u - a);
        let mut m = RateMultipliers::zero();
        m.gamma = 3.0;
        assert!(x_integral(0.4, 0.3, &m, psi_t, &tuk, &opts).is_ok());
        let mut m = RateMultipliers::zero();
        m.beta[1] = 0.2;
        assert!(matches!(
            x_integral(0.4, 0.3, &m, psi_t, &tuk, &opts),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn inner_sup_flags_unreachable_levels_and_dominates_zero_tilt() {
        let cfg = tukey_cfg(8.0);
        let opts = RateOptions::default();
        let (s, rho) = (0.4, 0.3);
        let flat = cfg.loss.flat_value().unwrap();
        for (g, level) in [
            (0.05, flat + 0.01),
            (0.05, -0.1),
            (0.09, 0.05), // above sup|ℓ′|²
            (-1.0, 0.05),
        ] {
            let sol = inner_sup(s, rho, g, level, &cfg, &opts, None).unwrap();
            assert!(!sol.feasible, "(g={g}, level={level}) should be unreachable");
            assert!(sol.value.is_infinite());
        }

        // An attainable pair: the fixed point's own moment levels, where the
        // saddle exists and the ascent must terminate at a stationary tilt.
        let fp = fixed_point(&cfg);
        let (g_star, iota_star) = fp_levels(&fp, &cfg.loss);
        let (s_fp, rho_fp) = (fp.state.s, fp.state.rho);
        let sol = inner_sup(s_fp, rho_fp, g_star, iota_star, &cfg, &opts, None).unwrap();
        assert!(
            sol.feasible && sol.converged,
            "value={} grad={} iters={} m={:?}",
            sol.value,
            sol.gradient_norm,
            sol.iterations,
            sol.multipliers
        );
        assert!(sol.gradient_norm <= opts.inner_tol);
        // The zero-multiplier point is feasible, so it lower-bounds the sup.
        let alpha = cfg.alpha;
        let psi = |u: f64, a: f64| cfg.loss.eval(u - a);
        let zero_val = s_fp.ln() / alpha
            + 0.5 * (1.0 + (alpha * g_star / (rho_fp * rho_fp)).ln()) / alpha
            - x_integral(s_fp, rho_fp, &RateMultipliers::zero(), psi, &cfg, &opts).unwrap();
        assert!(sol.value >= zero_val - 1e-9);
        assert!(sol.multipliers.zeta >= 0.0);
    }

    #[test]
    fn inner_objective_is_concave_on_random_segments() {
        let cfg = tukey_cfg(8.0);
        let opts = RateOptions::default();
        let (s, rho) = (0.4, 0.3);
        let panel = QuadratureGrid::legendre(opts.panel_order).unwrap();
        let psi = |u: f64, a: f64| cfg.loss.eval(u - a);
        let clouds: Vec<AtomCloud<N_SCALAR>> = cfg
            .noise
            .atoms
            .iter()
            .map(|&atom| scalar_cloud(s, rho, atom, &cfg.loss, &psi, &panel).unwrap())
            .collect();
        let problem = InnerProblem {
            clouds: &clouds,
            linear: SVector::from([0.05, 0.0, 0.08, 1.0 / 8.0, -1.0 / 8.0]),
            offset: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(271_828);
        for _ in 0..16 {
            let mut a = SVector::<f64, N_SCALAR>::zeros();
            let mut b = SVector::<f64, N_SCALAR>::zeros();
            for k in 0..N_SCALAR {
                a[k] = rng.gen_range(-2.0..2.0);
                b[k] = rng.gen_range(-2.0..2.0);
            }
            a[N_SCALAR - 1] = a[N_SCALAR - 1].abs();
            b[N_SCALAR - 1] = b[N_SCALAR - 1].abs();
            let mid = (a + b) * 0.5;
            let va = problem.value(&a).unwrap();
            let vb = problem.value(&b).unwrap();
            let vm = problem.value(&mid).unwrap();
            assert!(
                vm >= 0.5 * (va + vb) - 1e-9,
                "concavity violated: mid {vm} vs endpoints {va}, {vb}"
            );
        }
    }

    #[test]
    fn zero_rate_at_stable_fixed_points() {
        let opts = RateOptions::default();
        for alpha in [6.0, 8.0] {
            let cfg = tukey_cfg(alpha);
            let fp = fixed_point(&cfg);
            let (g_star, iota_star) = fp_levels(&fp, &cfg.loss);
            let cell = phi_tuk_with(
                fp.state.rho,
                iota_star,
                &cfg,
                &opts,
                Some((fp.state.s, g_star)),
            )
            .unwrap();
            assert!(
                cell.value.abs() <= 1e-2,
                "rate at the stable fixed point should vanish: alpha={alpha}, got {}",
                cell.value
            );
            assert!(cell.converged);
        }
    }

    #[test]
    fn rate_positive_away_from_minimizer() {
        let opts = RateOptions::default();
        for alpha in [6.0, 8.0, 12.0] {
            let cfg = tukey_cfg(alpha);
            let fp = fixed_point(&cfg);
            let (g_star, iota_star) = fp_levels(&fp, &cfg.loss);
            let rho_star = fp.state.rho;
            let candidates =
                [0.1, rho_star - 0.12, rho_star + 0.12, 0.9, 1.5, 2.0];
            for rho in candidates {
                if rho < 0.02 || rho > 2.0 || (rho - rho_star).abs() <= 0.06 {
                    continue;
                }
                let cell = phi_tuk_with(rho, iota_star, &cfg, &opts, Some((fp.state.s, g_star)))
                    .unwrap();
                assert!(
                    cell.value > 0.01,
                    "alpha={alpha}, rho={rho}: expected a positive rate, got {}",
                    cell.value
                );
            }
        }
    }

    #[test]
    fn unconstrained_envelope_negative_at_large_radius() {
        let cfg = tukey_cfg(8.0);
        let opts = RateOptions::default();
        let rho = 5.0;
        let mut hint = None;
        let mut best = f64::INFINITY;
        for iota in [0.03, 0.06, 0.09, 0.12, 0.15, 0.165] {
            let cell = phi_tuk_with(rho, iota, &cfg, &opts, hint).unwrap();
            hint = Some((cell.vars.s, cell.vars.g));
            best = best.min(cell.value);
        }
        assert!(
            best < -0.01,
            "the unconstrained envelope should go negative far out, got {best}"
        );
    }

    #[test]
    fn rate_surface_markers_match_fixed_point() {
        let cfg = tukey_cfg(8.0);
        let opts = RateOptions::default();
        let fp = fixed_point(&cfg);
        let (_, iota_star) = fp_levels(&fp, &cfg.loss);

        // A wide radius makes the unconstrained rate dip below zero at high
        // loss levels, so the crossover search has a genuine sign change.
        let rho_grid = [0.12, 0.18, 0.23, 0.30, 0.45, 0.70, 1.1, 5.0];
        let iota_grid = [0.05, 0.10, 0.12];
        let surface = phi_curves(&cfg, &rho_grid, &iota_grid, &opts).unwrap();
        for row in &surface.phi {
            for v in row {
                assert!(v.is_finite());
            }
        }
        let col_min = |j: usize| -> f64 {
            surface.phi.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min)
        };
        assert!(col_min(0) > 0.0 && col_min(1) > 0.0 && col_min(2) <= 0.0);
        assert!(
            surface.iota0 >= 0.10 && surface.iota0 < 0.12,
            "crossover should be bisected between the last two columns: {}",
            surface.iota0
        );
        for v in surface.phi_zero() {
            assert!(v >= -1e-6, "censored envelope must be nonnegative, got {v}");
        }
        assert_eq!(surface.phi_inf().len(), surface.rho_grid.len());

        // On a fixed-point-centred grid whose loss levels include the
        // fixed point's own, the censored argmin must reproduce it.
        let rs = fp.state.rho;
        let rho_grid = [0.7 * rs, 0.85 * rs, rs, 1.2 * rs, 1.5 * rs];
        let iota_grid = [iota_star, iota_star + 0.02, iota_star + 0.05];
        let surface = phi_curves(&cfg, &rho_grid, &iota_grid, &opts).unwrap();
        let rel = (surface.rho_star - rs).abs() / rs;
        assert!(
            rel <= 0.02,
            "censored-envelope argmin {} drifted from the fixed point {} ({:.2}%)",
            surface.rho_star,
            rs,
            100.0 * rel
        );
    }

    #[test]
    fn general_form_reduces_to_scalar_on_translation_manifold() {
        let cfg = tukey_cfg(8.0);
        let mut opts = RateOptions::default();
        opts.outer_value_tol = 1e-12;
        opts.outer_xtol = 1e-6;
        let (rho, iota) = (0.30, 0.05);
        let scalar = phi_tuk_with(rho, iota, &cfg, &opts, None).unwrap().value;
        let r00 = cfg.r00;
        let r = Matrix2::new(r00 + rho * rho, r00, r00, r00);
        let psi = |v: f64, v0: f64, w: f64| cfg.loss.eval(v - v0 - w);
        let general = phi_fin(&r, iota, &psi, &cfg, &opts).unwrap();
        assert_abs_diff_eq!(general, scalar, epsilon = 1e-6);
    }

    #[test]
    fn trivialization_constants_and_membership() {
        let cfg = tukey_cfg(8.0);
        let opts = RateOptions::default();
        let fp = fixed_point(&cfg);
        let rho2 = fp.state.rho * fp.state.rho;
        let report = trivialization_diagnostics(&cfg, rho2, &fp.nu_star, &opts).unwrap();
        assert_abs_diff_eq!(report.alpha0, 0.64, epsilon = 1e-15);
        assert_abs_diff_eq!(report.tau0, 0.5, epsilon = 1e-15);
        // At the fixed point the radius is too large for the near-trivial set.
        assert!(!report.in_trivial_set);
        assert!(report.b_star.is_finite());
        assert!(report.g_star >= 0.0 && report.g_star.is_finite());

        // Shrinking the radius pulls the pair into the near-trivial set.
        let panel = QuadratureGrid::legendre(opts.panel_order).unwrap();
        let joint = JointGrid::with_order(DEFAULT_ORDER_1D, cfg.noise.clone()).unwrap();
        let small = CurvatureMeasure::from_prox_pushforward(
            &cfg.loss,
            cfg.alpha,
            fp.state.s,
            1e-3,
            &joint,
            &panel,
        )
        .unwrap();
        let report_small = trivialization_diagnostics(&cfg, 1e-3, &small, &opts).unwrap();
        assert!(report_small.in_trivial_set);

        // Quadratic loss: zero threshold ratio, same pivot scale.
        let qcfg = quad_cfg(4.0);
        let fpq = se_solve(
            &qcfg,
            FixedPointState::default_for(&qcfg.loss),
            &SeOptions::default(),
        )
        .unwrap();
        let rq = trivialization_diagnostics(
            &qcfg,
            fpq.state.rho * fpq.state.rho,
            &fpq.nu_star,
            &opts,
        )
        .unwrap();
        assert_abs_diff_eq!(rq.alpha0, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rq.tau0, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn oversampling_certificate_is_finite_and_beyond_the_transition() {
        let cfg = tukey_cfg(8.0);
        let opts = RateOptions::default();
        let fp = fixed_point(&cfg);
        let report = trivialization_diagnostics(
            &cfg,
            fp.state.rho * fp.state.rho,
            &fp.nu_star,
            &opts,
        )
        .unwrap();
        let alpha_star = report.alpha_star.expect("certificate should exist for this noise");
        assert!(
            alpha_star > 20.0 && alpha_star < 1e12,
            "certificate {alpha_star} out of the plausible window"
        );
        // Same certificate must exist for the quadratic loss.
        let qcfg = quad_cfg(4.0);
        let fpq = se_solve(
            &qcfg,
            FixedPointState::default_for(&qcfg.loss),
            &SeOptions::default(),
        )
        .unwrap();
        let rq = trivialization_diagnostics(
            &qcfg,
            fpq.state.rho * fpq.state.rho,
            &fpq.nu_star,
            &opts,
        )
        .unwrap();
        assert!(rq.alpha_star.is_some());
    }

    #[test]
    fn gaussian_conditional_rate_closed_form() {
        let (r11, r10, r00, alpha) = (1.09, 1.0, 1.0, 8.0);
        let schur = r11 - r10 * r10 / r00;
        let matching = GaussianConditional { slope: r10 / r00, var: schur };
        assert_abs_diff_eq!(phi_mu(&matching, r11, r10, r00, alpha).unwrap(), 0.0, epsilon = 1e-16);
        let wide = GaussianConditional { slope: r10 / r00, var: 2.0 * schur };
        let expect = 0.5 * (2.0 - 1.0 - 2.0_f64.ln()) / alpha;
        assert_abs_diff_eq!(phi_mu(&wide, r11, r10, r00, alpha).unwrap(), expect, epsilon = 1e-12);
        let tilted = GaussianConditional { slope: 0.8, var: schur };
        assert!(phi_mu(&tilted, r11, r10, r00, alpha).unwrap() > 0.0);
        assert!(phi_mu(&matching, 0.5, 1.0, 1.0, alpha).is_err()); // Schur < 0
    }

    #[test]
    fn pushforward_rate_vanishes_at_matching_parameters() {
        let cfg = tukey_cfg(8.0);
        let opts = RateOptions::default();
        let fp = fixed_point(&cfg);
        let rho2 = fp.state.rho * fp.state.rho;
        let family = ProxFamily { rho2, s: fp.state.s };
        let parts = phi_nu(&family, rho2, fp.state.s, &cfg, &opts).unwrap();
        assert!(parts.kl.abs() <= 1e-8, "conditional KL should vanish, got {}", parts.kl);
        assert!(parts.value.abs() <= 1e-8, "rate should vanish, got {}", parts.value);
        assert!(!parts.at_replicon_boundary);
        assert_eq!(f_nu(1.0), 0.0);

        let mu = GaussianConditional { slope: 1.0, var: rho2 };
        let total = phi_measures(&mu, &family, rho2, fp.state.s, &cfg, &opts).unwrap();
        assert!(total.abs() <= 1e-8);
    }

    #[test]
    fn pushforward_rate_decomposition_matches_direct_form() {
        let cfg = tukey_cfg(8.0);
        let opts = RateOptions::default();
        let fp = fixed_point(&cfg);
        let rho2_f = fp.state.rho * fp.state.rho;
        let family = ProxFamily { rho2: rho2_f, s: fp.state.s };
        let s_eval = 0.8 * fp.state.s;
        let rho2_eval = rho2_f;
        let parts = phi_nu(&family, rho2_eval, s_eval, &cfg, &opts).unwrap();

        // Direct form: −E_ν log(1 + s ℓ″) + (1/2α) log(α e s² E_ν[ℓ′²]/ρ²)
        // + KL(ν_{·|w} ‖ N(0, R)), the joint KL averaged over the noise.
        let panel = QuadratureGrid::legendre(opts.panel_order).unwrap();
        let joint = JointGrid::with_order(DEFAULT_ORDER_1D, cfg.noise.clone()).unwrap();
        let nu = CurvatureMeasure::from_prox_pushforward(
            &cfg.loss,
            cfg.alpha,
            family.s,
            family.rho2,
            &joint,
            &panel,
        )
        .unwrap();
        let mut e_log_jac = 0.0;
        let mut e_d1sq = 0.0;
        for ((smp, d1), d2) in nu.samples.iter().zip(&nu.d1_values).zip(&nu.d2_values) {
            e_log_jac += smp.3 * (1.0 + s_eval * d2).ln();
            e_d1sq += smp.3 * d1 * d1;
        }
        let kappa = cfg.loss.flat_cutoff().unwrap();
        let rho_f = family.rho2.sqrt();
        let mut kl_joint = 0.0;
        for &(a, p) in &cfg.noise.atoms {
            let term = expect_kinked(
                0.0,
                rho_f,
                &[a - kappa, a + kappa],
                Tail::Numeric,
                Tail::Numeric,
                &panel,
                |zt| {
                    let v = prox(zt, family.s, &cfg.loss, 0.0, a).unwrap().value;
                    let num =
                        prox_density(v, family.s, family.rho2, &cfg.loss, 0.0, a).unwrap().ln();
                    let den = -0.5 * v * v / rho2_eval
                        - 0.5 * (2.0 * std::f64::consts::PI * rho2_eval).ln();
                    num - den
                },
            )
            .unwrap();
            kl_joint += p * term;
        }
        let direct = -e_log_jac
            + 0.5
                * (cfg.alpha * std::f64::consts::E * s_eval * s_eval * e_d1sq / rho2_eval).ln()
                / cfg.alpha
            + kl_joint;
        assert_abs_diff_eq!(parts.value, direct, epsilon = 1e-6);
        // The matching scale is a strict interior maximum along s: the
        // divergence penalty grows faster than the conditional KL, so the
        // functional dips below zero on both sides of the matching point.
        assert!(
            parts.value < -1e-5,
            "below the matching scale the functional should dip negative, got {}",
            parts.value
        );
        let above = phi_nu(&family, rho2_eval, 1.1 * fp.state.s, &cfg, &opts).unwrap();
        assert!(
            above.value < -1e-5 && above.kl > 0.0,
            "above the matching scale: value={}, kl={}",
            above.value,
            above.kl
        );
    }

    #[test]
    fn pushforward_rate_rejects_inadmissible_scales() {
        let cfg = tukey_cfg(8.0);
        let opts = RateOptions::default();
        let fp = fixed_point(&cfg);
        let rho2 = fp.state.rho * fp.state.rho;
        let family = ProxFamily { rho2, s: fp.state.s };
        // Inside the curvature cap but far beyond the replicon bound.
        assert!(matches!(
            phi_nu(&family, rho2, 1.24, &cfg, &opts),
            Err(Error::Domain(_))
        ));
        // Family scale itself must respect the convexity window.
        let bad = ProxFamily { rho2, s: 1.3 };
        assert!(phi_nu(&bad, rho2, fp.state.s, &cfg, &opts).is_err());
    }

    #[test]
    fn golden_section_locates_a_quadratic_minimum() {
        let (x, v) = golden_min(|x| (x - 1.3) * (x - 1.3) + 0.2, 0.0, 3.0, 1e-9, 200);
        assert_abs_diff_eq!(x, 1.3, epsilon = 1e-7);
        assert_abs_diff_eq!(v, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn rate_surface_serializes_round_trip() {
        let surface = RateSurface {
            rho_grid: vec![0.1, 0.2],
            iota_grid: vec![0.05],
            phi: vec![vec![0.3], vec![-0.1]],
            iota0: 0.05,
            rho_star: 0.2,
        };
        let text = serde_json::to_string(&surface).unwrap();
        let back: RateSurface = serde_json::from_str(&text).unwrap();
        assert_eq!(back, surface);
        assert_eq!(surface.phi_inf(), vec![0.3, -0.1]);
    }

    #[test]
    fn rejects_malformed_rate_inputs() {
        let cfg = tukey_cfg(8.0);
        let opts = RateOptions::default();
        assert!(phi_tuk(0.3, 0.2, &cfg).is_err()); // level above the plateau
        assert!(phi_tuk(-0.5, 0.05, &cfg).is_err());
        assert!(phi_tuk(0.3, 0.05, &quad_cfg(4.0)).is_err()); // needs saturation
        let psi = |v: f64, v0: f64, w: f64| cfg.loss.eval(v - v0 - w);
        let asym = Matrix2::new(1.09, 0.9, 1.0, 1.0);
        assert!(phi_fin(&asym, 0.05, &psi, &cfg, &opts).is_err());
        let wrong_pin = Matrix2::new(1.09, 1.0, 1.0, 2.0);
        assert!(phi_fin(&wrong_pin, 0.05, &psi, &cfg, &opts).is_err());
        let _ = mean_curvature(&cfg, 0.3); // helper stays exercised
    }


}
