//! Deterministic quadrature for expectations over `(G, w) ~ N(0,1) ⊗ P_w` and
//! bivariate Gaussians.
//!
//! Gauss–Hermite (probabilists' normalization, weights summing to 1) and
//! Gauss–Legendre rules are built by the Golub–Welsch eigendecomposition of the
//! Jacobi matrix. Integrands built from a bounded-influence loss have kinks at
//! the cutoff, which destroys the spectral accuracy of a plain global rule, so
//! [`expect_kinked`] splits the axis at caller-supplied breakpoints, applies
//! composite Gauss–Legendre panels on each smooth segment, and handles the two
//! unbounded tails exactly when the integrand is zero or constant there.

use nalgebra::{DMatrix, Matrix2};
use statrs::function::erf::erfc;

use crate::config::NoiseSpec;
use crate::error::{Error, Result};

/// Default 1-D Gauss–Hermite order used by the theory-side solvers.
pub const DEFAULT_ORDER_1D: usize = 200;
/// Default per-axis order for tensorized bivariate expectations.
pub const DEFAULT_ORDER_2D: usize = 80;
/// Default Gauss–Legendre order per panel in the kink-aware rule.
pub const DEFAULT_PANEL_ORDER: usize = 32;

/// Standardized half-width beyond which Gaussian mass is below f64 resolution.
pub(crate) const Z_MAX: f64 = 13.0;
/// Panel width (in standard deviations) for the composite rule.
const PANEL_WIDTH: f64 = 0.5;

pub(crate) const SQRT_2PI: f64 = 2.506_628_274_631_000_2;

fn phi_std(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

/// `P(Z ≤ z)` for standard normal `Z`, accurate in both tails.
fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// One-dimensional quadrature rule: nodes, weights, and the generating order.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

/// Golub–Welsch: nodes are eigenvalues of the symmetric tridiagonal Jacobi
/// matrix with the given off-diagonal, weights are `mass · v₀ᵢ²`.
fn golub_welsch(order: usize, offdiag: impl Fn(usize) -> f64, mass: f64) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::<f64>::zeros(order, order);
    for k in 1..order {
        let b = offdiag(k);
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| (eig.eigenvalues[i], mass * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Both measures are symmetric about 0: enforce the symmetry exactly.
    let n = pairs.len();
    for i in 0..n / 2 {
        let x = 0.5 * (pairs[i].0 - pairs[n - 1 - i].0);
        let w = 0.5 * (pairs[i].1 + pairs[n - 1 - i].1);
        pairs[i] = (x, w);
        pairs[n - 1 - i] = (-x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    pairs.into_iter().unzip()
}

impl QuadratureGrid {
    /// Gauss–Hermite rule for the standard normal measure (weights sum to 1).
    pub fn hermite(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::InvalidParameter(format!(
                "quadrature order must be at least 2, got {order}"
            )));
        }
        let (nodes, mut weights) = golub_welsch(order, |k| (k as f64).sqrt(), 1.0);
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Ok(QuadratureGrid { nodes, weights, order })
    }

    /// Gauss–Legendre rule on `[-1, 1]` (weights sum to 2).
    pub fn legendre(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::InvalidParameter(format!(
                "quadrature order must be at least 2, got {order}"
            )));
        }
        let (nodes, weights) =
            golub_welsch(order, |k| k as f64 / (4.0 * (k * k) as f64 - 1.0).sqrt(), 2.0);
        Ok(QuadratureGrid { nodes, weights, order })
    }

    /// `E f(G)` over the rule's measure.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            let v = f(x);
            if !v.is_finite() {
                return Err(Error::NumericDomain {
                    what: format!("integrand returned {v}"),
                    where_: format!("node g={x}"),
                });
            }
            acc += w * v;
        }
        Ok(acc)
    }
}

/// Product rule for `(G, w) ~ N(0,1) ⊗ P_w`.
#[derive(Debug, Clone)]
pub struct JointGrid {
    pub gauss: QuadratureGrid,
    pub noise: NoiseSpec,
}

impl JointGrid {
    pub fn new(gauss: QuadratureGrid, noise: NoiseSpec) -> Self {
        JointGrid { gauss, noise }
    }

    pub fn with_order(order: usize, noise: NoiseSpec) -> Result<Self> {
        Ok(JointGrid { gauss: QuadratureGrid::hermite(order)?, noise })
    }

    /// `E f(scale · G, w)` as the tensor sum `Σᵢⱼ wᵢ pⱼ f(scale · nᵢ, aⱼ)`.
    pub fn expect_joint(&self, scale: f64, f: impl Fn(f64, f64) -> f64) -> Result<f64> {
        if !(scale >= 0.0) {
            return Err(Error::InvalidParameter(format!("scale must be nonnegative, got {scale}")));
        }
        let mut acc = 0.0;
        for &(a, p) in &self.noise.atoms {
            for (&x, &wq) in self.gauss.nodes.iter().zip(&self.gauss.weights) {
                let v = f(scale * x, a);
                if !v.is_finite() {
                    return Err(Error::NumericDomain {
                        what: format!("integrand returned {v}"),
                        where_: format!("node (g={}, w={a})", scale * x),
                    });
                }
                acc += wq * p * v;
            }
        }
        Ok(acc)
    }

    /// `E f(u, u₀, w)` with `(u, u₀) ~ N(0, R)` tensorized through a square
    /// root of `R` (eigendecomposition, so singular covariances are accepted).
    pub fn expect_bivariate(
        &self,
        r: &Matrix2<f64>,
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Result<f64> {
        if (r[(0, 1)] - r[(1, 0)]).abs() > 1e-12 * (1.0 + r.norm()) {
            return Err(Error::InvalidParameter("covariance matrix is not symmetric".into()));
        }
        let eig = r.symmetric_eigen();
        let tol = -1e-10 * (1.0 + r.norm());
        let mut factor = eig.eigenvectors;
        for j in 0..2 {
            let lam = eig.eigenvalues[j];
            if lam < tol {
                return Err(Error::InvalidParameter(format!(
                    "covariance matrix has negative eigenvalue {lam}"
                )));
            }
            let s = lam.max(0.0).sqrt();
            factor[(0, j)] *= s;
            factor[(1, j)] *= s;
        }
        let mut acc = 0.0;
        for &(a, p) in &self.noise.atoms {
            for (&x1, &w1) in self.gauss.nodes.iter().zip(&self.gauss.weights) {
                for (&x2, &w2) in self.gauss.nodes.iter().zip(&self.gauss.weights) {
                    let u = factor[(0, 0)] * x1 + factor[(0, 1)] * x2;
                    let u0 = factor[(1, 0)] * x1 + factor[(1, 1)] * x2;
                    let v = f(u, u0, a);
                    if !v.is_finite() {
                        return Err(Error::NumericDomain {
                            what: format!("integrand returned {v}"),
                            where_: format!("node (u={u}, u0={u0}, w={a})"),
                        });
                    }
                    acc += w1 * w2 * p * v;
                }
            }
        }
        Ok(acc)
    }
}

/// Exact behaviour of an integrand beyond its outermost breakpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tail {
    /// The integrand vanishes in the tail (derivatives of a bounded loss).
    Zero,
    /// The integrand equals a constant in the tail (the loss plateau).
    Const(f64),
    /// No closed form: the tail is integrated numerically.
    Numeric,
}

/// `E f(X)` for `X ~ N(mean, sd²)` when `f` is smooth between consecutive
/// `breaks` (given in `X` coordinates). Composite Gauss–Legendre panels are
/// laid between breakpoints; `lower`/`upper` describe `f` beyond the first and
/// last breakpoint, letting bounded-loss tails be accumulated in closed form.
pub fn expect_kinked(
    mean: f64,
    sd: f64,
    breaks: &[f64],
    lower: Tail,
    upper: Tail,
    panel: &QuadratureGrid,
    f: impl Fn(f64) -> f64,
) -> Result<f64> {
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::InvalidParameter(format!("sd must be positive finite, got {sd}")));
    }
    let mut z: Vec<f64> = breaks
        .iter()
        .filter(|b| b.is_finite())
        .map(|&b| (b - mean) / sd)
        .collect();
    z.sort_by(f64::total_cmp);
    z.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

    let mut acc = 0.0;
    // Tail masses use the exact (unclipped) breakpoints.
    let (lo_z, hi_z) = if z.is_empty() {
        (-Z_MAX, Z_MAX)
    } else {
        let first = z[0];
        let last = *z.last().unwrap();
        match lower {
            Tail::Zero => {}
            Tail::Const(c) => acc += c * normal_cdf(first),
            Tail::Numeric => {}
        }
        match upper {
            Tail::Zero => {}
            Tail::Const(c) => acc += c * normal_cdf(-last),
            Tail::Numeric => {}
        }
        let lo = if matches!(lower, Tail::Numeric) { -Z_MAX } else { first.max(-Z_MAX) };
        let hi = if matches!(upper, Tail::Numeric) { Z_MAX } else { last.min(Z_MAX) };
        (lo, hi)
    };

    let mut edges: Vec<f64> = vec![lo_z];
    edges.extend(z.iter().copied().filter(|&b| b > lo_z + 1e-14 && b < hi_z - 1e-14));
    edges.push(hi_z);

    for seg in edges.windows(2) {
        for (x, wq) in gaussian_segment_nodes(mean, sd, seg[0], seg[1], panel) {
            let v = f(x);
            if !v.is_finite() {
                return Err(Error::NumericDomain {
                    what: format!("integrand returned {v}"),
                    where_: format!("node x={x}"),
                });
            }
            acc += wq * v;
        }
    }
    Ok(acc)
}

/// Nodes/weights such that `Σ wᵢ f(xᵢ) ≈ ∫_{lo}^{hi} f(x) φ_{mean,sd}(x) dx` for
/// `f` smooth on the segment; `lo`/`hi` are in standardized units.
pub fn gaussian_segment_nodes(
    mean: f64,
    sd: f64,
    lo_z: f64,
    hi_z: f64,
    panel: &QuadratureGrid,
) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    if hi_z - lo_z <= 1e-14 {
        return out;
    }
    let n_panels = ((hi_z - lo_z) / PANEL_WIDTH).ceil() as usize;
    let step = (hi_z - lo_z) / n_panels as f64;
    out.reserve(n_panels * panel.nodes.len());
    for k in 0..n_panels {
        let (p, q) = (lo_z + k as f64 * step, lo_z + (k + 1) as f64 * step);
        let (mid, half) = (0.5 * (p + q), 0.5 * (q - p));
        for (&x, &w) in panel.nodes.iter().zip(&panel.weights) {
            let zz = mid + half * x;
            out.push((mean + sd * zz, half * w * phi_std(zz)));
        }
    }
    out
}

/// `P(Z ≤ z)` for a standard normal, exposed for exact tail-mass bookkeeping.
pub fn gaussian_cdf(z: f64) -> f64 {
    normal_cdf(z)
}
