//! Volume-of-tube geometry: arc length of the standardized posterior curve
//! on the unit sphere and the quantile solving the tube equation
//! gamma = |beta| pi^{-1} exp(-w^2/2) + 2 [1 - Phi(w)].

use crate::basis::{self, KnotVector};
use crate::error::{Error, Result};
use crate::linalg::BandedCholesky;
use crate::posterior::PosteriorState;

/// Standard normal CDF. erfc keeps the upper tail accurate.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Arc length of the curve x -> M^{1/2} b(x) / ||M^{1/2} b(x)|| together
/// with the quadrature bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcLength {
    pub value: f64,
    pub dim: usize,
    pub intervals: usize,
    pub nodes_per_interval: usize,
    /// |value - refined| for a run with doubled nodes; a cheap error probe.
    pub estimated_error: f64,
}

/// Solved quantile of the tube equation at credibility level 1 - gamma.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeQuantile {
    pub gamma: f64,
    pub arc_length: f64,
    pub w: f64,
}

/// The three scalars g2 = b'Sb, g1 = bdot'Sb, g3 = bdot'Sbdot that determine
/// the arc-length integrand for a metric S.
trait MetricScalars {
    fn scalars(&self, b: &[f64], bd: &[f64]) -> (f64, f64, f64);
}

/// S = (B'B + Omega^{-1})^{-1}, applied through the banded factor.
struct PosteriorMetric<'a>(&'a BandedCholesky);

impl MetricScalars for PosteriorMetric<'_> {
    fn scalars(&self, b: &[f64], bd: &[f64]) -> (f64, f64, f64) {
        let u = self.0.solve(b).expect("dimension fixed by caller");
        let v = self.0.solve(bd).expect("dimension fixed by caller");
        let g2 = dot(b, &u);
        let g1 = dot(bd, &u);
        let g3 = dot(bd, &v);
        (g2, g1, g3)
    }
}

/// S = M (B'B) M with M = (B'B + Omega^{-1})^{-1}: the sandwich metric of
/// the frequentist curve. Scalars reduce to inner products against
/// z = (B'B) M b, so two solves and two banded multiplies per node suffice.
struct FrequentistMetric<'a> {
    factor: &'a BandedCholesky,
    gram: &'a crate::linalg::BandedSymMatrix,
}

impl MetricScalars for FrequentistMetric<'_> {
    fn scalars(&self, b: &[f64], bd: &[f64]) -> (f64, f64, f64) {
        let u = self.factor.solve(b).expect("dimension fixed by caller");
        let v = self.factor.solve(bd).expect("dimension fixed by caller");
        let z = self.gram.mul_vec(&u).expect("dimension fixed by caller");
        let zd = self.gram.mul_vec(&v).expect("dimension fixed by caller");
        let g2 = dot(&u, &z);
        let g1 = dot(&v, &z);
        let g3 = dot(&v, &zd);
        (g2, g1, g3)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// ||beta'(x)|| for the metric S at one point. With g2 = b'Sb, g1 = bdot'Sb,
/// g3 = bdot'Sbdot the squared normalized speed is (g2 g3 - g1^2)/g2^2;
/// Cauchy-Schwarz in the S-inner product keeps the radicand nonnegative.
fn speed<M: MetricScalars>(metric: &M, kv: &KnotVector, x: f64) -> Result<f64> {
    let b = basis::eval(kv, x)?.to_dense();
    let bd = basis::eval_deriv(kv, x)?.to_dense();
    let (g2, g1, g3) = metric.scalars(&b, &bd);
    if !(g2 > 0.0) || !g2.is_finite() {
        return Err(Error::NumericalDegeneracy(format!(
            "nonpositive norm b'Sb = {g2} at x = {x}"
        )));
    }
    Ok((g2 * g3 - g1 * g1).max(0.0).sqrt() / g2)
}

fn quadrature<M: MetricScalars>(
    metric: &M,
    kv: &KnotVector,
    nodes_per_interval: usize,
) -> Result<(f64, usize)> {
    let (nodes, weights) = gauss_legendre(nodes_per_interval);
    let bp = kv.breakpoints();
    let mut total = 0.0;
    for seg in bp.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (&t, &w) in nodes.iter().zip(&weights) {
            total += w * half * speed(metric, kv, mid + half * t)?;
        }
    }
    Ok((total, bp.len() - 1))
}

fn arc_length_for<M: MetricScalars>(
    metric: &M,
    kv: &KnotVector,
    nodes_per_interval: usize,
) -> Result<ArcLength> {
    if nodes_per_interval < 4 {
        return Err(Error::InvalidConfig(format!(
            "nodes_per_interval = {nodes_per_interval} must be at least 4"
        )));
    }
    let (value, intervals) = quadrature(metric, kv, nodes_per_interval)?;
    let (refined, _) = quadrature(metric, kv, 2 * nodes_per_interval)?;
    Ok(ArcLength {
        value,
        dim: kv.dim(),
        intervals,
        nodes_per_interval,
        estimated_error: (value - refined).abs(),
    })
}

/// Arc length |beta_J| under the posterior metric M = (B'B + Omega^{-1})^{-1},
/// by composite Gauss-Legendre over the knot intervals (the integrand kinks
/// at knots). Two banded solves per node.
pub fn arc_length(state: &PosteriorState, nodes_per_interval: usize) -> Result<ArcLength> {
    arc_length_for(
        &PosteriorMetric(state.factor()),
        state.knots(),
        nodes_per_interval,
    )
}

/// Arc length |beta_{0,J}| with the sandwich metric M (B'B) M in place of M.
pub fn arc_length_frequentist(
    state: &PosteriorState,
    nodes_per_interval: usize,
) -> Result<ArcLength> {
    arc_length_for(
        &FrequentistMetric {
            factor: state.factor(),
            gram: state.gram(),
        },
        state.knots(),
        nodes_per_interval,
    )
}

/// Arc length for an arbitrary SPD metric given by its banded Cholesky
/// factor of S^{-1}; used by the tail-bound validation.
pub fn arc_length_with_factor(
    kv: &KnotVector,
    inv_factor: &BandedCholesky,
    nodes_per_interval: usize,
) -> Result<ArcLength> {
    arc_length_for(&PosteriorMetric(inv_factor), kv, nodes_per_interval)
}

/// Right-hand side of the tube equation at w.
pub fn tube_equation(arc: f64, w: f64) -> f64 {
    arc / std::f64::consts::PI * (-0.5 * w * w).exp() + 2.0 * (1.0 - normal_cdf(w))
}

/// One-sided Naiman-type tail bound |beta|/(2 pi) e^{-w^2/2} + 1 - Phi(w).
pub fn tube_tail_bound(arc: f64, w: f64) -> f64 {
    arc / (2.0 * std::f64::consts::PI) * (-0.5 * w * w).exp() + 1.0 - normal_cdf(w)
}

/// Solves the tube equation for w at level gamma by bisection.
///
/// The right-hand side is strictly decreasing on [0, inf) with value
/// arc/pi + 1 >= gamma at 0, so a unique nonnegative root exists.
pub fn solve_quantile(arc: f64, gamma: f64) -> Result<TubeQuantile> {
    // gamma = 1 is admitted as the degenerate boundary (w = 0 when arc = 0)
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidGamma(gamma));
    }
    if arc < 0.0 || !arc.is_finite() {
        return Err(Error::NumericalDegeneracy(format!(
            "arc length {arc} must be finite and nonnegative"
        )));
    }
    let mut lo = 0.0f64;
    if tube_equation(arc, lo) <= gamma {
        return Ok(TubeQuantile {
            gamma,
            arc_length: arc,
            w: 0.0,
        });
    }
    let mut hi = 1.0f64;
    while tube_equation(arc, hi) > gamma {
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::NumericalDegeneracy(
                "tube equation root exceeds bracket".into(),
            ));
        }
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if tube_equation(arc, mid) > gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(TubeQuantile {
        gamma,
        arc_length: arc,
        w: 0.5 * (lo + hi),
    })
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2, "need at least two quadrature nodes");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th root
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // evaluate P_n(x) and P_n'(x)
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}
