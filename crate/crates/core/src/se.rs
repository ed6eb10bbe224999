//! Damped fixed-point iteration for the local optimality conditions of the
//! limiting M-estimator, stability classification, and phase-boundary sweeps.
//!
//! The scalar reduction iterates, with `v_t = Prox_ℓ(ρ_t G; s_t)` and `t = v − w`,
//!
//! ```text
//! ρ_{t+1} = (α s_t² E[ℓ′(t)²])^{1/2}
//! s_{t+1} = (α E[ℓ″(t)/(1 + s_t ℓ″(t))])⁻¹ ∧ 1/L_min
//! ```
//!
//! damped as `x_{t+1} = (1 − damping)·step(x_t) + damping·x_t`. A fixed point
//! is *stable* when the iteration converged, the clip at `1/L_min` is
//! inactive, and the replicon statistic satisfies `E₃ < 1`. The generalized
//! (ridge) solver iterates the 2×2 overlap matrix `R` alongside `s`; with
//! `λ = 0` it reduces exactly to the scalar scheme.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ProblemConfig;
use crate::error::{Error, Result};
use crate::loss::Loss;
use crate::prox::prox;
use crate::quad::{JointGrid, QuadratureGrid, DEFAULT_PANEL_ORDER};
use crate::spectral::{replicon_e3, CurvatureMeasure};

/// The clip sits a hair inside `1/L_min` so that prox solves stay strongly
/// convex at clipped states; the offset is far below the solver tolerance.
const CLIP_FRACTION: f64 = 1.0 - 1e-12;

/// Iterate `(ρ_t, s_t)` of the fixed-point scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedPointState {
    pub rho: f64,
    pub s: f64,
}

impl FixedPointState {
    /// Default start: `ρ₀ = 0.5`, `s₀` at the middle of the admissible range.
    pub fn default_for(loss: &Loss) -> Self {
        let lmin = loss.curvature_min();
        let s = if lmin > 0.0 { 0.5 / lmin } else { 0.5 };
        FixedPointState { rho: 0.5, s }
    }
}

/// Solver knobs shared by every state-evolution entry point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeOptions {
    /// Damping of the fixed-point map (0 = undamped).
    pub damping: f64,
    /// Convergence threshold on `|Δρ| + |Δs|`.
    pub tol: f64,
    /// Iteration budget.
    pub t_max: usize,
    /// Gauss–Hermite order for smooth expectations.
    pub quad_order: usize,
}

impl Default for SeOptions {
    fn default() -> Self {
        SeOptions { damping: 0.3, tol: 1e-10, t_max: 1000, quad_order: 200 }
    }
}

/// Outcome of a fixed-point solve, with the diagnostics needed to classify it.
#[derive(Debug, Clone)]
pub struct FixedPointSolution {
    pub state: FixedPointState,
    pub converged: bool,
    pub iterations: usize,
    /// Replicon statistic `E₃` at the final state.
    pub e3: f64,
    /// Converged, clip inactive, and `E₃ ≤ 1 − 1e−8`.
    pub stable: bool,
    /// Defects of the two fixed-point equalities at the final state.
    pub residuals: (f64, f64),
    /// Curvature law ν⋆ at the final state.
    pub nu_star: CurvatureMeasure,
    /// Gaussian integration-by-parts defect `E[ℓ′(v⋆ − w) v⋆]`.
    pub ibp_residual: f64,
}

impl FixedPointSolution {
    /// Risk levels under the fixed point's pushforward law: the gradient
    /// second moment `E[ℓ′(v⋆)²]` and the limiting train loss `E[ℓ(v⋆ − w)]`.
    pub fn risk_levels(&self, loss: &Loss) -> (f64, f64) {
        let mut g = 0.0;
        let mut iota = 0.0;
        for (smp, d1) in self.nu_star.samples.iter().zip(&self.nu_star.d1_values) {
            let (v, _v0, w, weight) = *smp;
            g += weight * d1 * d1;
            iota += weight * loss.eval(v - w);
        }
        (g, iota)
    }
}

/// Phase boundary `α_tr(SNR)`; `None` marks cells where the classifier did
/// not change across the bracket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseBoundary {
    pub snr_grid: Vec<f64>,
    pub alpha_tr: Vec<Option<f64>>,
}

/// The two expectations driving one step: `E[ℓ′(t)²]` and `E[ℓ″/(1 + sℓ″)]`,
/// with `t` the prox output at effective argument `ρG − w`.
fn step_expectations(
    rho: f64,
    s: f64,
    loss: &Loss,
    grid: &JointGrid,
    panel: &QuadratureGrid,
) -> Result<(f64, f64)> {
    match loss.flat_cutoff() {
        Some(_) => {
            // Band nodes in estimator coordinates; both derivatives vanish on
            // the flat tails, so the band carries the whole expectation. The
            // node weight contains the Jacobian 1 + sℓ″, which cancels the
            // s-update denominator exactly — safe arbitrarily close to the
            // curvature clip.
            let mut a_sq = 0.0;
            let mut q = 0.0;
            for &(a, p) in &grid.noise.atoms {
                for (t, w) in CurvatureMeasure::band_nodes(loss, s, rho, a, panel)? {
                    let d1 = loss.d1(t);
                    let d2 = loss.d2(t);
                    a_sq += p * w * d1 * d1;
                    q += p * w * d2 / (1.0 + s * d2);
                }
            }
            Ok((a_sq, q))
        }
        None => {
            let a_sq = grid.expect_joint(rho, |g, w| {
                let t = prox(g - w, s, loss, 0.0, 0.0).map(|r| r.value).unwrap_or(f64::NAN);
                loss.d1(t).powi(2)
            })?;
            let q = grid.expect_joint(rho, |g, w| {
                let t = prox(g - w, s, loss, 0.0, 0.0).map(|r| r.value).unwrap_or(f64::NAN);
                let c = loss.d2(t);
                c / (1.0 + s * c)
            })?;
            Ok((a_sq, q))
        }
    }
}

fn raw_step(
    state: &FixedPointState,
    cfg: &ProblemConfig,
    grid: &JointGrid,
    panel: &QuadratureGrid,
) -> Result<(FixedPointState, bool)> {
    if !(state.rho > 0.0) || !(state.s > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "state (rho={}, s={}) outside the domain",
            state.rho, state.s
        )));
    }
    let (a_sq, q) = step_expectations(state.rho, state.s, &cfg.loss, grid, panel)?;
    let rho_next = state.s * (cfg.alpha * a_sq).sqrt();
    let s_cap = if cfg.loss.curvature_min() > 0.0 {
        CLIP_FRACTION / cfg.loss.curvature_min()
    } else {
        f64::INFINITY
    };
    let raw = cfg.alpha * q;
    let (s_next, clipped) = if raw <= 0.0 || 1.0 / raw >= s_cap {
        (s_cap, true)
    } else {
        (1.0 / raw, false)
    };
    Ok((FixedPointState { rho: rho_next, s: s_next }, clipped))
}

/// One undamped application of the fixed-point map.
pub fn se_step(
    state: &FixedPointState,
    cfg: &ProblemConfig,
    grid: &JointGrid,
) -> Result<FixedPointState> {
    let panel = QuadratureGrid::legendre(DEFAULT_PANEL_ORDER)?;
    raw_step(state, cfg, grid, &panel).map(|(s, _)| s)
}

/// Run the damped iteration to a fixed point and classify it.
pub fn se_solve(
    cfg: &ProblemConfig,
    init: FixedPointState,
    opts: &SeOptions,
) -> Result<FixedPointSolution> {
    if !(0.0..1.0).contains(&opts.damping) {
        return Err(Error::InvalidParameter(format!(
            "damping must lie in [0, 1), got {}",
            opts.damping
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {}", opts.tol)));
    }
    cfg.validate()?;
    let grid = JointGrid::with_order(opts.quad_order, cfg.noise.clone())?;
    let panel = QuadratureGrid::legendre(DEFAULT_PANEL_ORDER)?;

    let mut x = init;
    let mut converged = false;
    let mut iterations = 0;
    let mut degenerate = false;
    for t in 0..opts.t_max {
        let (next_raw, _) = raw_step(&x, cfg, &grid, &panel)?;
        if !(next_raw.rho > 0.0) || !next_raw.rho.is_finite() {
            // The iterate escaped to the flat region; no fixed point here.
            iterations = t + 1;
            degenerate = true;
            break;
        }
        let next = FixedPointState {
            rho: (1.0 - opts.damping) * next_raw.rho + opts.damping * x.rho,
            s: (1.0 - opts.damping) * next_raw.s + opts.damping * x.s,
        };
        let delta = (next.rho - x.rho).abs() + (next.s - x.s).abs();
        x = next;
        iterations = t + 1;
        if delta < opts.tol {
            converged = true;
            break;
        }
    }

    if degenerate {
        // Report an honest failure with a harmless placeholder measure.
        let nu = CurvatureMeasure::from_parts(
            vec![(0.0, 0.0, 0.0, 1.0)],
            vec![0.0],
            vec![0.0],
            cfg.alpha,
        )?;
        return Ok(FixedPointSolution {
            state: x,
            converged: false,
            iterations,
            e3: f64::NAN,
            stable: false,
            residuals: (f64::NAN, f64::NAN),
            nu_star: nu,
            ibp_residual: f64::NAN,
        });
    }

    let (fixed, clipped) = raw_step(&x, cfg, &grid, &panel)?;
    let residuals = ((fixed.rho - x.rho).abs(), (fixed.s - x.s).abs());
    let nu_star =
        CurvatureMeasure::from_prox_pushforward(&cfg.loss, cfg.alpha, x.s, x.rho * x.rho, &grid, &panel)?;
    let e3 = replicon_e3(x.s, &nu_star)?;
    let ibp_residual = nu_star
        .samples
        .iter()
        .zip(&nu_star.d1_values)
        .map(|(smp, &d1)| smp.3 * d1 * smp.0)
        .sum::<f64>();
    let stable = converged && !clipped && e3 <= 1.0 - 1e-8;
    Ok(FixedPointSolution {
        state: x,
        converged,
        iterations,
        e3,
        stable,
        residuals,
        nu_star,
        ibp_residual,
    })
}

/// Classify `(α, snr)` as admitting a stable fixed point from a given start.
fn stable_at(
    alpha: f64,
    snr: f64,
    loss: &Loss,
    opts: &SeOptions,
    init: FixedPointState,
) -> Result<FixedPointSolution> {
    let cfg = ProblemConfig::with_ridge(alpha, snr, 1.0, 0.0, loss.clone())?;
    se_solve(&cfg, init, opts)
}

/// Bisection in α of the stable/unstable classifier at fixed SNR.
///
/// Requires instability at `alpha_lo` and stability at `alpha_hi`; a
/// classifier constant across the bracket is reported as a bracket error.
pub fn sweep_alpha_tr(
    snr: f64,
    loss: &Loss,
    alpha_lo: f64,
    alpha_hi: f64,
    bisect_tol: f64,
    opts: &SeOptions,
) -> Result<f64> {
    if !(alpha_lo < alpha_hi) {
        return Err(Error::InvalidParameter(format!(
            "need alpha_lo < alpha_hi, got [{alpha_lo}, {alpha_hi}]"
        )));
    }
    let default_init = FixedPointState::default_for(loss);
    let sol_lo = stable_at(alpha_lo, snr, loss, opts, default_init)?;
    let sol_hi = stable_at(alpha_hi, snr, loss, opts, default_init)?;
    if sol_lo.stable || !sol_hi.stable {
        return Err(Error::Bracket(format!(
            "classifier does not change across [{alpha_lo}, {alpha_hi}] at snr={snr} \
             (lo stable: {}, hi stable: {})",
            sol_lo.stable, sol_hi.stable
        )));
    }
    let (mut lo, mut hi) = (alpha_lo, alpha_hi);
    // Warm-start probes from the nearest stable solution as the bracket closes.
    let mut warm = sol_hi.state;
    while hi - lo > bisect_tol {
        let mid = 0.5 * (lo + hi);
        let sol = stable_at(mid, snr, loss, opts, warm)?;
        if sol.stable {
            hi = mid;
            warm = sol.state;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Trace `α_tr` over an SNR grid; cells without a transition give `None`.
pub fn phase_diagram(
    snr_grid: &[f64],
    loss: &Loss,
    alpha_lo: f64,
    alpha_hi: f64,
    bisect_tol: f64,
    opts: &SeOptions,
) -> Result<PhaseBoundary> {
    let alpha_tr: Vec<Option<f64>> = snr_grid
        .par_iter()
        .map(|&snr| match sweep_alpha_tr(snr, loss, alpha_lo, alpha_hi, bisect_tol, opts) {
            Ok(a) => Ok(Some(a)),
            Err(Error::Bracket(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    Ok(PhaseBoundary { snr_grid: snr_grid.to_vec(), alpha_tr })
}

/// Generalized solver state: overlap matrix entries alongside `s` (`r₀₀` is
/// pinned by the signal law).
#[derive(Debug, Clone, Copy)]
struct GeneralState {
    r11: f64,
    r10: f64,
    s: f64,
}

/// Solve the `(s, R)` system of the general local optimality conditions by
/// damped iteration; with `λ = 0` this reduces exactly to the scalar scheme
/// through `ρ² = r₁₁ − 2r₁₀ + r₀₀`.
pub fn solve_local_optimality_general(
    cfg: &ProblemConfig,
    opts: &SeOptions,
) -> Result<FixedPointSolution> {
    cfg.validate()?;
    let grid = JointGrid::with_order(opts.quad_order, cfg.noise.clone())?;
    let panel = QuadratureGrid::legendre(DEFAULT_PANEL_ORDER)?;
    let init_scalar = FixedPointState::default_for(&cfg.loss);
    let mut x = GeneralState {
        r11: cfg.r00 + init_scalar.rho * init_scalar.rho,
        r10: cfg.r00,
        s: init_scalar.s,
    };
    let s_cap = if cfg.loss.curvature_min() > 0.0 {
        CLIP_FRACTION / cfg.loss.curvature_min()
    } else {
        f64::INFINITY
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut clipped = false;
    for t in 0..opts.t_max {
        let rho2 = (x.r11 - 2.0 * x.r10 + cfg.r00).max(1e-300);
        let (a_sq, q) = step_expectations(rho2.sqrt(), x.s, &cfg.loss, &grid, &panel)?;
        // Stationarity in (r₁₁, r₁₀) given (s, ρ): a linear 2×2 system whose
        // solution is r₁₀ = r₀₀·αsq and r₁₁ = αsq·r₁₀ + αs²·E[ℓ′²].
        let asq_q = cfg.alpha * x.s * q;
        let r10_new = cfg.r00 * asq_q;
        let r11_new = asq_q * r10_new + cfg.alpha * x.s * x.s * a_sq;
        let denom = cfg.alpha * (q + cfg.lambda);
        let (s_new, clip_now) = if denom <= 0.0 || 1.0 / denom >= s_cap {
            (s_cap, true)
        } else {
            (1.0 / denom, false)
        };
        clipped = clip_now;
        let next = GeneralState {
            r11: (1.0 - opts.damping) * r11_new + opts.damping * x.r11,
            r10: (1.0 - opts.damping) * r10_new + opts.damping * x.r10,
            s: (1.0 - opts.damping) * s_new + opts.damping * x.s,
        };
        let delta =
            (next.r11 - x.r11).abs() + (next.r10 - x.r10).abs() + (next.s - x.s).abs();
        x = next;
        iterations = t + 1;
        if delta < opts.tol {
            converged = true;
            break;
        }
    }

    let rho2 = (x.r11 - 2.0 * x.r10 + cfg.r00).max(1e-300);
    let state = FixedPointState { rho: rho2.sqrt(), s: x.s };
    let (a_sq, q) = step_expectations(state.rho, state.s, &cfg.loss, &grid, &panel)?;
    let rho2_fix = cfg.alpha * state.s * state.s * a_sq
        + (cfg.alpha * state.s * cfg.lambda).powi(2) * cfg.r00;
    let denom = cfg.alpha * (q + cfg.lambda);
    let s_fix = if denom <= 0.0 { s_cap } else { (1.0 / denom).min(s_cap) };
    let residuals = ((rho2_fix.sqrt() - state.rho).abs(), (s_fix - state.s).abs());
    let nu_star =
        CurvatureMeasure::from_prox_pushforward(&cfg.loss, cfg.alpha, state.s, rho2, &grid, &panel)?;
    let e3 = replicon_e3(state.s, &nu_star)?;
    let ibp_residual = nu_star
        .samples
        .iter()
        .zip(&nu_star.d1_values)
        .map(|(smp, &d1)| smp.3 * d1 * smp.0)
        .sum::<f64>();
    let stable = converged && !clipped && e3 <= 1.0 - 1e-8;
    Ok(FixedPointSolution {
        state,
        converged,
        iterations,
        e3,
        stable,
        residuals,
        nu_star,
        ibp_residual,
    })
}
