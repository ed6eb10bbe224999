//! Generalized Marchenko–Pastur machinery for the limiting Hessian spectrum.
//!
//! The limiting eigenvalue law of `(1/n) Xᵀ diag(ℓ″) X` is characterized by its
//! Stieltjes transform. Everything downstream needs only three scalar
//! functions of the curvature law ν:
//!
//! * `G_ST(s) = 1/(αs) − E_ν[ℓ″/(1 + sℓ″)]`, whose minimum over the admissible
//!   `s` interval locates the spectral edge `ζ_min = −G_ST(s_min)`;
//! * `K_ST(s; z) = −αzs + α E_ν[log(1 + sℓ″)] − log s − (log α + 1)`, the
//!   variational form of the log-potential `∫ log(ζ − z) dμ`;
//! * the replicon statistic `E₃(s) = α E_ν[(sℓ″/(1 + sℓ″))²]`, which equals 1
//!   exactly at an interior edge and certifies stability when below 1.
//!
//! ν is never manipulated abstractly: it is always a quadrature pushforward of
//! `(prox(G; s), v₀, w)` stored as weighted samples ([`CurvatureMeasure`]).

use crate::error::{Error, Result};
use crate::loss::Loss;
use crate::prox::prox;
use crate::quad::{gaussian_cdf, JointGrid, QuadratureGrid, SQRT_2PI, Z_MAX};

/// Relative bisection width at which root searches stop.
const BISECT_REL: f64 = 1e-14;
/// Hard cap for `s` searches when the admissible interval is unbounded.
const S_CAP: f64 = 1e12;

/// Discrete representation of the curvature law ν = Law(v, v₀, w) together
/// with the loss derivatives evaluated at the samples.
///
/// Samples are `(v, v₀, w, weight)`. Flat-region mass is lumped into one
/// sample per tail (placed at the band edge) carrying `d1 = d2 = 0`; this is
/// exact for every functional of `(ℓ′, ℓ″)` and for `E[ℓ′ · h(v)]`-type
/// statistics, which is all the consumers evaluate.
#[derive(Debug, Clone)]
pub struct CurvatureMeasure {
    /// `(v, v₀, w, weight)` per sample; weights sum to 1.
    pub samples: Vec<(f64, f64, f64, f64)>,
    /// `ℓ′(v; v₀, w)` at each sample.
    pub d1_values: Vec<f64>,
    /// `ℓ″(v; v₀, w)` at each sample.
    pub d2_values: Vec<f64>,
    /// `L₀(ν) = −(0 ∧ min ℓ″)`, the largest negative curvature seen.
    pub l0: f64,
    /// Oversampling ratio `n/d`.
    pub alpha: f64,
}

impl CurvatureMeasure {
    /// Validated assembly from raw parts (mainly for tests and edge cases).
    pub fn from_parts(
        samples: Vec<(f64, f64, f64, f64)>,
        d1_values: Vec<f64>,
        d2_values: Vec<f64>,
        alpha: f64,
    ) -> Result<Self> {
        if samples.len() != d1_values.len() || samples.len() != d2_values.len() {
            return Err(Error::InvalidParameter("sample/derivative length mismatch".into()));
        }
        let total: f64 = samples.iter().map(|s| s.3).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "curvature-measure weights sum to {total}, expected 1"
            )));
        }
        let min_d2 = d2_values.iter().copied().fold(f64::INFINITY, f64::min);
        let l0 = (-min_d2).max(0.0);
        Ok(CurvatureMeasure { samples, d1_values, d2_values, l0, alpha })
    }

    /// Pushforward of `v = Prox_{ℓ(·; 0, w)}(g; s)` with `g − w ~ N(−w, ρ²)`
    /// per noise atom: the curvature law at a candidate fixed point `(ρ, s)`.
    ///
    /// For bounded-influence losses the prox is the identity outside the
    /// cutoff band, so each atom contributes Gauss–Legendre panels across the
    /// band plus two exactly-weighted flat-tail samples.
    pub fn from_prox_pushforward(
        loss: &Loss,
        alpha: f64,
        s: f64,
        rho2: f64,
        joint: &JointGrid,
        panel: &QuadratureGrid,
    ) -> Result<Self> {
        if !(rho2 > 0.0) {
            return Err(Error::InvalidParameter(format!("rho2 must be positive, got {rho2}")));
        }
        let rho = rho2.sqrt();
        let mut samples = Vec::new();
        let mut d1_values = Vec::new();
        let mut d2_values = Vec::new();
        for &(a, p) in &joint.noise.atoms {
            // Effective argument zt = ρG − w ~ N(−a, ρ²); the prox solution t
            // feeds the loss derivatives and v = t + w.
            match loss.flat_cutoff() {
                Some(kappa) => {
                    let z_lo = (-kappa + a) / rho;
                    let z_hi = (kappa + a) / rho;
                    samples.push((a - kappa, 0.0, a, p * gaussian_cdf(z_lo)));
                    d1_values.push(0.0);
                    d2_values.push(0.0);
                    samples.push((a + kappa, 0.0, a, p * gaussian_cdf(-z_hi)));
                    d1_values.push(0.0);
                    d2_values.push(0.0);
                    for (t, wq) in Self::band_nodes(loss, s, rho, a, panel)? {
                        samples.push((t + a, 0.0, a, p * wq));
                        d1_values.push(loss.d1(t));
                        d2_values.push(loss.d2(t));
                    }
                }
                None => {
                    for (&g, &wq) in joint.gauss.nodes.iter().zip(&joint.gauss.weights) {
                        let zt = rho * g - a;
                        let t = prox(zt, s, loss, 0.0, 0.0)?.value;
                        samples.push((t + a, 0.0, a, p * wq));
                        d1_values.push(loss.d1(t));
                        d2_values.push(loss.d2(t));
                    }
                }
            }
        }
        // Tail masses go through the erf backend; renormalize the ~1e−11 drift
        // so the weights-sum invariant holds exactly.
        let total: f64 = samples.iter().map(|s| s.3).sum();
        for s in &mut samples {
            s.3 /= total;
        }
        Self::from_parts(samples, d1_values, d2_values, alpha)
    }

    /// Quadrature nodes across the prox band in estimator coordinates `t`,
    /// weighted by the change of variables `z = sℓ′(t) + t`:
    /// `dP = (1 + sℓ″(t))·φ(sℓ′(t) + t; −a, ρ) dt`. Integrating in `t` keeps
    /// band functionals well conditioned as `1 + sℓ″ ↓ 0` (near the clip the
    /// Jacobian cancels the incipient pole, which node placement in the
    /// Gaussian coordinate cannot resolve).
    pub(crate) fn band_nodes(
        loss: &Loss,
        s: f64,
        rho: f64,
        a: f64,
        panel: &QuadratureGrid,
    ) -> Result<Vec<(f64, f64)>> {
        let kappa = loss
            .flat_cutoff()
            .ok_or_else(|| Error::InvalidParameter("band nodes require a bounded loss".into()))?;
        let t_lo = prox(-a - Z_MAX * rho, s, loss, 0.0, 0.0)?.value.max(-kappa);
        let t_hi = prox(-a + Z_MAX * rho, s, loss, 0.0, 0.0)?.value.min(kappa);
        let mut nodes = Vec::new();
        if t_lo >= t_hi {
            return Ok(nodes);
        }
        // Panel width resolves both the Gaussian factor (z-scale ρ, steepest
        // slope 1 + s·sup ℓ″ ≲ 2.25) and the loss polynomials (scale κ).
        let width = (kappa / 4.0).min(0.22 * rho);
        let n = (((t_hi - t_lo) / width).ceil() as usize).clamp(1, 2000);
        let step = (t_hi - t_lo) / n as f64;
        nodes.reserve(n * panel.nodes.len());
        for j in 0..n {
            let lo = t_lo + j as f64 * step;
            let (mid, half) = (lo + 0.5 * step, 0.5 * step);
            for (&x, &wq) in panel.nodes.iter().zip(&panel.weights) {
                let t = mid + half * x;
                let z = (s * loss.d1(t) + t + a) / rho;
                let w = wq * half * (1.0 + s * loss.d2(t)) * (-0.5 * z * z).exp()
                    / (SQRT_2PI * rho);
                nodes.push((t, w));
            }
        }
        Ok(nodes)
    }

    fn expect_d2(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.samples.iter().zip(&self.d2_values).map(|(s, &c)| s.3 * f(c)).sum()
    }

    /// Upper end of the admissible `s` interval (`∞` when `L₀ = 0`).
    pub fn s_limit(&self) -> f64 {
        if self.l0 > 0.0 {
            1.0 / self.l0
        } else {
            f64::INFINITY
        }
    }

    fn check_s(&self, s: f64) -> Result<()> {
        if s > 0.0 && s <= self.s_limit() * (1.0 + 1e-12) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "s={s} outside the admissible interval (0, {}]",
                self.s_limit()
            )))
        }
    }
}

/// `G_ST(s) = 1/(αs) − E_ν[ℓ″/(1 + sℓ″)]`; `+∞` when the boundary sample
/// makes `1 + sℓ″` vanish.
pub fn g_st(s: f64, m: &CurvatureMeasure) -> Result<f64> {
    m.check_s(s)?;
    let mut e = 0.0;
    for (sample, &c) in m.samples.iter().zip(&m.d2_values) {
        let denom = 1.0 + s * c;
        if denom <= 0.0 {
            return Ok(f64::INFINITY);
        }
        e += sample.3 * c / denom;
    }
    Ok(1.0 / (m.alpha * s) - e)
}

/// `E₃(s) = α E_ν[(sℓ″/(1 + sℓ″))²]`, the replicon statistic.
pub fn replicon_e3(s: f64, m: &CurvatureMeasure) -> Result<f64> {
    m.check_s(s)?;
    let mut e = 0.0;
    for (sample, &c) in m.samples.iter().zip(&m.d2_values) {
        let denom = 1.0 + s * c;
        if denom <= 0.0 {
            return Ok(f64::INFINITY);
        }
        e += sample.3 * (s * c / denom).powi(2);
    }
    Ok(m.alpha * e)
}

/// `K_ST(s; z) = −αzs + α E_ν[log(1 + sℓ″)] − log s − (log α + 1)`.
pub fn k_st(s: f64, z: f64, m: &CurvatureMeasure) -> Result<f64> {
    m.check_s(s)?;
    let mut e = 0.0;
    for (sample, &c) in m.samples.iter().zip(&m.d2_values) {
        let arg = 1.0 + s * c;
        if arg <= 0.0 {
            return Err(Error::NumericDomain {
                what: format!("log of nonpositive argument {arg}"),
                where_: format!("K_ST at s={s}, curvature {c}"),
            });
        }
        e += sample.3 * arg.ln();
    }
    Ok(-m.alpha * z * s + m.alpha * e - s.ln() - (m.alpha.ln() + 1.0))
}

/// `s² G_ST′(s) = −1/α + E[(sℓ″/(1+sℓ″))²]`: strictly increasing, so its root
/// is the unique minimizer of `G_ST`.
fn scaled_slope(s: f64, m: &CurvatureMeasure) -> f64 {
    let e: f64 = m.expect_d2(|c| {
        let denom = 1.0 + s * c;
        if denom <= 0.0 {
            return f64::INFINITY;
        }
        (s * c / denom).powi(2)
    });
    e - 1.0 / m.alpha
}

/// Spectral-edge report: the minimizer of `G_ST`, the edge location, and the
/// replicon statistic there.
#[derive(Debug, Clone, Copy)]
pub struct SpectralResult {
    /// Minimizer of `G_ST` (`∞` sentinel when the spectrum degenerates).
    pub s_min: f64,
    /// `ζ_min = −G_ST(s_min)`, the lower edge of the limiting spectrum.
    pub zeta_min: f64,
    /// Root of `G_ST(s) = −z` when one was requested, else `None`.
    pub s_star_at_z: Option<f64>,
    /// Replicon statistic at `s_min` (1 at an interior edge).
    pub e3: f64,
    /// True when the minimizer sits at the boundary `s = 1/L₀`.
    pub boundary: bool,
}

/// Locate the lower spectral edge by bisecting the strictly-increasing
/// `s² G_ST′` on the admissible interval.
pub fn spectral_edge(m: &CurvatureMeasure) -> Result<SpectralResult> {
    if m.d2_values.iter().all(|&c| c == 0.0) {
        // Zero-curvature law: the spectrum degenerates at the origin.
        return Ok(SpectralResult {
            s_min: f64::INFINITY,
            zeta_min: 0.0,
            s_star_at_z: None,
            e3: 0.0,
            boundary: false,
        });
    }
    let mut lo = 1e-12 / m.l0.max(1e-3);
    let mut hi = if m.l0 > 0.0 {
        (1.0 - 1e-11) / m.l0
    } else {
        let mut h = 1.0;
        while scaled_slope(h, m) < 0.0 && h < S_CAP {
            h *= 2.0;
        }
        h
    };
    if scaled_slope(hi, m) < 0.0 {
        if m.l0 > 0.0 {
            // Minimizer pinned at the boundary of the admissible interval.
            let s_min = 1.0 / m.l0;
            let zeta = -g_st(s_min, m)?;
            let e3 = replicon_e3(s_min, m)?;
            return Ok(SpectralResult { s_min, zeta_min: zeta, s_star_at_z: None, e3, boundary: true });
        }
        // G_ST decreases to 0 from above: the spectrum reaches the origin.
        return Ok(SpectralResult {
            s_min: f64::INFINITY,
            zeta_min: 0.0,
            s_star_at_z: None,
            e3: replicon_e3(S_CAP, m)?,
            boundary: false,
        });
    }
    while hi - lo > BISECT_REL * hi {
        let mid = 0.5 * (lo + hi);
        if scaled_slope(mid, m) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s_min = 0.5 * (lo + hi);
    Ok(SpectralResult {
        s_min,
        zeta_min: -g_st(s_min, m)?,
        s_star_at_z: None,
        e3: replicon_e3(s_min, m)?,
        boundary: false,
    })
}

/// Solve `G_ST(s) = −z` on `(0, s_min]` (the branch with `G_ST′ ≤ 0`).
pub fn solve_s_star(z: f64, m: &CurvatureMeasure) -> Result<f64> {
    let edge = spectral_edge(m)?;
    let scale = 1.0 + edge.zeta_min.abs();
    if z > edge.zeta_min + 1e-10 * scale {
        return Err(Error::Domain(format!(
            "z={z} lies inside the spectrum (edge at {})",
            edge.zeta_min
        )));
    }
    // At the edge the root is a tangency (G′ = 0): bisection would dither in
    // the rounding plateau, but the root is s_min itself.
    if edge.s_min.is_finite() && z >= edge.zeta_min - 1e-12 * scale {
        return Ok(edge.s_min);
    }
    let mut hi = if edge.s_min.is_finite() {
        edge.s_min
    } else {
        let mut h = 1.0;
        while g_st(h, m)? + z > 0.0 && h < S_CAP {
            h *= 2.0;
        }
        h
    };
    let mut lo = 1e-300;
    // g + z ≥ 0 at lo (G_ST → +∞) and ≤ 0 at hi up to edge tolerance.
    while hi - lo > BISECT_REL * hi {
        let mid = 0.5 * (lo + hi);
        if g_st(mid, m)? + z > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::NoiseSpec;
    use crate::quad::DEFAULT_PANEL_ORDER;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn quad_measure(alpha: f64) -> CurvatureMeasure {
        let noise = NoiseSpec::from_snr(2.73, 1.0).unwrap();
        let joint = JointGrid::with_order(64, noise).unwrap();
        let panel = QuadratureGrid::legendre(DEFAULT_PANEL_ORDER).unwrap();
        CurvatureMeasure::from_prox_pushforward(
            &Loss::quadratic(),
            alpha,
            0.5,
            0.7,
            &joint,
            &panel,
        )
        .unwrap()
    }

    fn tukey_measure(alpha: f64, s: f64, rho2: f64) -> CurvatureMeasure {
        let noise = NoiseSpec::from_snr(2.73, 1.0).unwrap();
        let joint = JointGrid::with_order(64, noise).unwrap();
        let panel = QuadratureGrid::legendre(DEFAULT_PANEL_ORDER).unwrap();
        CurvatureMeasure::from_prox_pushforward(
            &Loss::tukey(1.0).unwrap(),
            alpha,
            s,
            rho2,
            &joint,
            &panel,
        )
        .unwrap()
    }

    fn flat_measure(alpha: f64) -> CurvatureMeasure {
        CurvatureMeasure::from_parts(
            vec![(0.0, 0.0, 0.0, 0.6), (1.0, 0.0, 0.0, 0.4)],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            alpha,
        )
        .unwrap()
    }

    #[test]
    fn g_st_matches_quadratic_formula() {
        let m = quad_measure(4.0);
        assert_abs_diff_eq!(g_st(1.0, &m).unwrap(), -0.25, epsilon = 1e-12);
        assert!(g_st(1e-9, &m).unwrap() > 1e8);
        let flat = flat_measure(4.0);
        for s in [0.3, 1.0, 7.0] {
            assert_abs_diff_eq!(g_st(s, &flat).unwrap(), 1.0 / (4.0 * s), epsilon = 1e-14);
        }
    }

    #[test]
    fn classical_mp_closed_forms() {
        // s⋆(0) = 1/(α−1), ζ_min = (1 − 1/√α)², edge ratio s/(1+s) = 1/√α.
        for alpha in [2.0, 4.0, 9.0, 25.0] {
            let m = quad_measure(alpha);
            let edge = spectral_edge(&m).unwrap();
            let root = alpha.sqrt();
            assert_abs_diff_eq!(edge.s_min, 1.0 / (root - 1.0), epsilon = 1e-8);
            assert_abs_diff_eq!(edge.zeta_min, (1.0 - 1.0 / root).powi(2), epsilon = 1e-8);
            assert_abs_diff_eq!(edge.s_min / (1.0 + edge.s_min), 1.0 / root, epsilon = 1e-8);
            assert_abs_diff_eq!(edge.e3, 1.0, epsilon = 1e-6);
            assert!(!edge.boundary);
            let s0 = solve_s_star(0.0, &m).unwrap();
            assert_abs_diff_eq!(s0, 1.0 / (alpha - 1.0), epsilon = 1e-8);
            assert!((g_st(s0, &m).unwrap()).abs() <= 1e-10);
        }
    }

    #[test]
    fn s_star_examples_and_domain() {
        let m2 = quad_measure(2.0);
        assert_abs_diff_eq!(solve_s_star(0.0, &m2).unwrap(), 1.0, epsilon = 1e-8);
        let m4 = quad_measure(4.0);
        let edge = spectral_edge(&m4).unwrap();
        let s_at_edge = solve_s_star(edge.zeta_min, &m4).unwrap();
        assert_abs_diff_eq!(s_at_edge, edge.s_min, epsilon = 1e-8);
        assert!(matches!(
            solve_s_star(edge.zeta_min + 1e-3, &m4),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn replicon_examples() {
        let m = quad_measure(4.0);
        assert_abs_diff_eq!(replicon_e3(1.0 / 3.0, &m).unwrap(), 0.25, epsilon = 1e-12);
        assert!(replicon_e3(1e-9, &m).unwrap() < 1e-15);
        let t = tukey_measure(8.0, 0.389_872, 0.052_206);
        let edge = spectral_edge(&t).unwrap();
        if !edge.boundary {
            assert_abs_diff_eq!(edge.e3, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn k_st_closed_form_and_stationarity() {
        // α = 4, z = 0: K_ST(1/3; 0) = 3 log(4/3) − 1 by direct algebra, and
        // it equals the Marchenko–Pastur mean log-eigenvalue.
        let m = quad_measure(4.0);
        let s0 = solve_s_star(0.0, &m).unwrap();
        let k = k_st(s0, 0.0, &m).unwrap();
        assert_abs_diff_eq!(k, 3.0 * (4.0f64 / 3.0).ln() - 1.0, epsilon = 1e-10);
        // Stationarity via central differences.
        let h = 1e-6;
        let fd = (k_st(s0 + h, 0.0, &m).unwrap() - k_st(s0 - h, 0.0, &m).unwrap()) / (2.0 * h);
        assert!(fd.abs() <= 1e-8, "∂K/∂s at s⋆ = {fd}");
        // Same stationarity off z = 0 and for a bounded-influence measure.
        let t = tukey_measure(8.0, 0.389_872, 0.052_206);
        let edge = spectral_edge(&t).unwrap();
        let z = 0.5 * edge.zeta_min;
        let sz = solve_s_star(z, &t).unwrap();
        let fd2 = (k_st(sz + h, z, &t).unwrap() - k_st(sz - h, z, &t).unwrap()) / (2.0 * h);
        assert!(fd2.abs() <= 1e-8, "∂K/∂s at s⋆(z) = {fd2}");
    }

    #[test]
    fn k_st_constrained_minimum_is_at_s_star() {
        // min { K_ST(s; z) : E[(sℓ″/(1+sℓ″))²] ≤ 1/α } is attained at s⋆(z).
        let m = tukey_measure(8.0, 0.389_872, 0.052_206);
        let edge = spectral_edge(&m).unwrap();
        let z = 0.3 * edge.zeta_min;
        let s_star = solve_s_star(z, &m).unwrap();
        let k_star = k_st(s_star, z, &m).unwrap();
        let mut best = f64::INFINITY;
        for i in 1..=400 {
            let s = edge.s_min * i as f64 / 400.0;
            if scaled_slope(s, &m) <= 0.0 {
                best = best.min(k_st(s, z, &m).unwrap());
            }
        }
        assert!(best >= k_star - 1e-8, "grid min {best} below variational value {k_star}");
        assert!(best <= k_star + 1e-4, "grid should approach the variational value");
    }

    #[test]
    fn wishart_log_determinant_bridge() {
        // Exact finite-dimensional Wishart expectation: for X (n×d) standard
        // normal, E log det((1/n)XᵀX) = Σ_{i<d} [ψ((n−i)/2) + log 2 − log n].
        // Its mean log-eigenvalue converges to K_ST(s⋆(0); 0).
        let (d, n) = (2000usize, 8000usize);
        let m = quad_measure(4.0);
        let k = k_st(solve_s_star(0.0, &m).unwrap(), 0.0, &m).unwrap();
        let mut mean_log = 0.0;
        for i in 0..d {
            mean_log += statrs::function::gamma::digamma((n - i) as f64 / 2.0)
                + std::f64::consts::LN_2
                - (n as f64).ln();
        }
        mean_log /= d as f64;
        assert!((k - mean_log).abs() <= 2e-2, "K_ST {k} vs Wishart {mean_log}");
    }

    #[test]
    #[ignore = "random-matrix oracle at d = 2000 takes tens of minutes single-threaded"]
    fn k_st_matches_monte_carlo_log_potential() {
        let (d, n, draws) = (2000usize, 8000usize, 20usize);
        let m = quad_measure(4.0);
        let k = k_st(solve_s_star(0.0, &m).unwrap(), 0.0, &m).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut acc = 0.0;
        for _ in 0..draws {
            let x = nalgebra::DMatrix::<f64>::from_fn(n, d, |_, _| {
                StandardNormal.sample(&mut rng)
            });
            let gram = x.transpose() * &x / n as f64;
            let eig = gram.symmetric_eigen();
            acc += eig.eigenvalues.iter().map(|&l| l.ln()).sum::<f64>() / d as f64;
        }
        acc /= draws as f64;
        assert!((k - acc).abs() <= 2e-2, "K_ST {k} vs MC {acc}");
    }

    #[test]
    fn scaled_slope_is_increasing_and_edge_is_critical() {
        for m in [quad_measure(6.0), tukey_measure(8.0, 0.389_872, 0.052_206)] {
            let hi = if m.s_limit().is_finite() { m.s_limit() * (1.0 - 1e-9) } else { 5.0 };
            let mut prev = f64::NEG_INFINITY;
            for i in 1..=200 {
                let s = hi * i as f64 / 200.0;
                let v = scaled_slope(s, &m);
                assert!(v >= prev - 1e-12, "s²G′ must be nondecreasing");
                prev = v;
            }
            let edge = spectral_edge(&m).unwrap();
            if !edge.boundary {
                assert!(scaled_slope(edge.s_min, &m).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_zero_curvature_spectrum() {
        let m = flat_measure(4.0);
        let edge = spectral_edge(&m).unwrap();
        assert!(edge.s_min.is_infinite());
        assert_eq!(edge.zeta_min, 0.0);
        assert_eq!(edge.e3, 0.0);
    }

    #[test]
    fn pushforward_weights_and_l0() {
        let m = tukey_measure(8.0, 0.389_872, 0.052_206);
        let total: f64 = m.samples.iter().map(|s| s.3).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        let min_d2 = m.d2_values.iter().copied().fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(m.l0, (-min_d2).max(0.0), epsilon = 1e-12);
        assert!(m.l0 > 0.0 && m.l0 <= 0.8 + 1e-12);
        // d1 is the loss derivative at v − v₀ − w for every retained sample.
        let loss = Loss::tukey(1.0).unwrap();
        for (i, &(v, v0, w, _)) in m.samples.iter().enumerate() {
            assert_abs_diff_eq!(m.d1_values[i], loss.d1(v - v0 - w), epsilon = 1e-12);
        }
    }

    #[test]
    fn empirical_spectrum_reaches_the_predicted_edge() {
        // Min eigenvalue of (1/n) Xᵀ diag(ℓ″) X across draws vs ζ_min, d=500.
        let (alpha, s, rho2) = (8.0, 0.389_872, 0.052_206);
        let m = tukey_measure(alpha, s, rho2);
        let edge = spectral_edge(&m).unwrap();
        let loss = Loss::tukey(1.0).unwrap();
        let noise = NoiseSpec::from_snr(2.73, 1.0).unwrap();
        let rho = rho2.sqrt();
        let (d, n, draws) = (500usize, 4000usize, 10usize);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        let mut mean_min = 0.0;
        for _ in 0..draws {
            let mut curv = Vec::with_capacity(n);
            for _ in 0..n {
                let g: f64 = StandardNormal.sample(&mut rng);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut w = noise.atoms[noise.atoms.len() - 1].0;
                for &(a, p) in &noise.atoms {
                    acc += p;
                    if u < acc {
                        w = a;
                        break;
                    }
                }
                let t = prox(rho * g - w, s, &loss, 0.0, 0.0).unwrap().value;
                curv.push(loss.d2(t));
            }
            let x = nalgebra::DMatrix::<f64>::from_fn(n, d, |_, _| {
                StandardNormal.sample(&mut rng)
            });
            let mut weighted = x.clone();
            for (i, &c) in curv.iter().enumerate() {
                weighted.row_mut(i).scale_mut(c);
            }
            let hessian = x.transpose() * weighted / n as f64;
            let sym = 0.5 * (&hessian + hessian.transpose());
            let min_eig = sym
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            mean_min += min_eig;
            worst = worst.max((min_eig - edge.zeta_min).abs());
        }
        mean_min /= draws as f64;
        assert!(
            (mean_min - edge.zeta_min).abs() <= 0.1 * edge.zeta_min.abs().max(0.05),
            "mean min eigenvalue {mean_min} vs predicted edge {}",
            edge.zeta_min
        );
    }
}
