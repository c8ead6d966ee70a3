//! Conjugate Gaussian posterior for the series coefficients at a fixed
//! basis dimension, with the empirical-Bayes noise variance.

use crate::basis::{self, KnotScheme, KnotVector};
use crate::error::{Error, Result};
use crate::linalg::{self, BandedCholesky, BandedSymMatrix};

/// Gaussian prior on the coefficients: theta ~ N(eta, sigma^2 Omega).
///
/// `omega_inv` holds the diagonal prior precision; the default matches a
/// prior variance of 10 per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub eta: f64,
    pub omega_inv: OmegaInv,
}

/// Diagonal prior precision, either a scalar broadcast or per-coordinate.
#[derive(Debug, Clone, PartialEq)]
pub enum OmegaInv {
    Scalar(f64),
    Entries(Vec<f64>),
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            eta: 0.0,
            omega_inv: OmegaInv::Scalar(0.1),
        }
    }
}

impl PriorSpec {
    pub fn with_scalar_precision(omega_inv: f64) -> Self {
        PriorSpec {
            eta: 0.0,
            omega_inv: OmegaInv::Scalar(omega_inv),
        }
    }

    fn precision_matrix(&self, dim: usize) -> Result<BandedSymMatrix> {
        match &self.omega_inv {
            OmegaInv::Scalar(c) => {
                if *c <= 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "prior precision must be positive, got {c}"
                    )));
                }
                Ok(BandedSymMatrix::scaled_identity(dim, *c))
            }
            OmegaInv::Entries(es) => {
                if es.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: es.len(),
                    });
                }
                if es.iter().any(|&e| e <= 0.0) {
                    return Err(Error::InvalidConfig(
                        "prior precision entries must be positive".into(),
                    ));
                }
                Ok(BandedSymMatrix::diagonal(es))
            }
        }
    }

}

/// Observed regression data on [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Dataset {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptyDesign);
        }
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                got: ys.len(),
            });
        }
        if let Some(&bad) = xs.iter().find(|x| !(0.0..=1.0).contains(*x) || !x.is_finite()) {
            return Err(Error::DomainError(bad));
        }
        Ok(Dataset { xs, ys })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }
}

/// Fitted posterior at a fixed dimension J: the factored shrinkage matrix,
/// the coefficient mean, and the empirical-Bayes noise scale.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    knots: KnotVector,
    gram: BandedSymMatrix,
    factor: BandedCholesky,
    theta_hat: Vec<f64>,
    sigma_hat: f64,
    n: usize,
}

/// Fits the conjugate posterior at dimension `j`.
///
/// The coefficient mean solves (B'B + Omega^{-1}) theta = B'Y + Omega^{-1} eta.
/// The noise variance comes from the marginal likelihood; the n x n inverse
/// in its textbook form reduces to
/// sigma^2 = n^{-1} [ ||Y - B eta||^2 - z' (B'B + Omega^{-1})^{-1} z ]
/// with z = B'(Y - B eta), so only banded solves are needed.
pub fn fit(data: &Dataset, j: usize, q: usize, prior: &PriorSpec) -> Result<PosteriorState> {
    let kv = basis::make_knots(j, q, KnotScheme::Uniform)?;
    let gram = linalg::gram(&kv, data.xs())?;
    let omega_inv = prior.precision_matrix(j)?;
    let factor = linalg::cholesky(&gram.add_banded(&omega_inv)?)?;

    // Residual against the prior mean function B eta (eta broadcast scalar).
    let eta = prior.eta;
    let resid: Vec<f64> = if eta == 0.0 {
        data.ys().to_vec()
    } else {
        // partition of unity: (B eta)_i = eta
        data.ys().iter().map(|y| y - eta).collect()
    };
    let z = linalg::gram_rhs(&kv, data.xs(), &resid)?;
    let n = data.len();

    let m_z = factor.solve(&z)?;
    let rss: f64 = resid.iter().map(|r| r * r).sum();
    let explained: f64 = z.iter().zip(&m_z).map(|(a, b)| a * b).sum();
    let sigma_sq = ((rss - explained) / n as f64).max(0.0);

    // theta_hat = M (B'Y + Omega^{-1} eta) = eta + M z for broadcast eta.
    let theta_hat: Vec<f64> = if eta == 0.0 {
        m_z
    } else {
        m_z.iter().map(|v| v + eta).collect()
    };

    Ok(PosteriorState {
        knots: kv,
        gram,
        factor,
        theta_hat,
        sigma_hat: sigma_sq.sqrt(),
        n,
    })
}

impl PosteriorState {
    pub fn dim(&self) -> usize {
        self.knots.dim()
    }

    pub fn order(&self) -> usize {
        self.knots.order()
    }

    pub fn n_obs(&self) -> usize {
        self.n
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn gram(&self) -> &BandedSymMatrix {
        &self.gram
    }

    pub fn factor(&self) -> &BandedCholesky {
        &self.factor
    }

    pub fn theta_hat(&self) -> &[f64] {
        &self.theta_hat
    }

    /// Empirical-Bayes noise standard deviation.
    pub fn sigma_hat(&self) -> f64 {
        self.sigma_hat
    }

    /// Posterior mean of f at x.
    pub fn mean_at(&self, x: f64) -> Result<f64> {
        let b = basis::eval(&self.knots, x)?;
        Ok(b.dot(&self.theta_hat))
    }

    /// Posterior variance of f at x: sigma^2 b(x)' (B'B + Omega^{-1})^{-1} b(x).
    pub fn var_at(&self, x: f64) -> Result<f64> {
        let b = basis::eval(&self.knots, x)?;
        Ok(self.sigma_hat * self.sigma_hat * self.factor.quad_form_basis(&b)?)
    }

    /// Posterior mean evaluated on a uniform grid of the given size.
    pub fn mean_on_grid(&self, grid_size: usize) -> Result<Vec<f64>> {
        uniform_grid(grid_size)
            .map(|x| self.mean_at(x))
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn set_theta_for_test(&mut self, index: usize, value: f64) {
        self.theta_hat[index] = value;
    }
}

/// The uniform evaluation grid k/(G-1), k = 0..G-1 shared by sup-norm scans
/// and band construction.
pub fn uniform_grid(size: usize) -> impl Iterator<Item = f64> {
    let denom = (size - 1).max(1) as f64;
    (0..size).map(move |k| k as f64 / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn design_matrix(kv: &KnotVector, xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), kv.dim(), |r, c| {
            basis::eval(kv, xs[r]).unwrap().to_dense()[c]
        })
    }

    fn random_data(rng: &mut StdRng, n: usize) -> Dataset {
        let xs: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| (6.0 * x).sin() + 0.3 * rng.gen_range(-1.0..1.0))
            .collect();
        Dataset::new(xs, ys).unwrap()
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![], vec![]).is_err());
        assert!(Dataset::new(vec![0.5], vec![1.0, 2.0]).is_err());
        assert!(Dataset::new(vec![1.5], vec![1.0]).is_err());
    }

    #[test]
    fn noiseless_prior_mean_gives_zero_sigma() {
        // Y = B eta exactly: with eta broadcast the fitted values are eta
        let n = 40;
        let xs: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
        let ys = vec![2.5; n];
        let data = Dataset::new(xs, ys).unwrap();
        let prior = PriorSpec {
            eta: 2.5,
            omega_inv: OmegaInv::Scalar(0.1),
        };
        let state = fit(&data, 8, 4, &prior).unwrap();
        assert_abs_diff_eq!(state.sigma_hat(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn overwhelming_prior_pins_theta_to_eta() {
        let mut rng = StdRng::seed_from_u64(5);
        let n = 5;
        let xs: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data = Dataset::new(xs, ys).unwrap();
        let prior = PriorSpec {
            eta: 0.7,
            omega_inv: OmegaInv::Scalar(1e8),
        };
        let state = fit(&data, 4, 4, &prior).unwrap();
        for &t in state.theta_hat() {
            assert_abs_diff_eq!(t, 0.7, epsilon = 1e-6);
        }
    }

    #[test]
    fn vanishing_prior_matches_least_squares() {
        let mut rng = StdRng::seed_from_u64(9);
        let data = random_data(&mut rng, 200);
        let state = fit(&data, 10, 4, &PriorSpec::with_scalar_precision(1e-8)).unwrap();
        let kv = state.knots().clone();
        let b = design_matrix(&kv, data.xs());
        let y = DVector::from_column_slice(data.ys());
        let ls = (b.transpose() * &b)
            .lu()
            .solve(&(b.transpose() * y))
            .unwrap();
        for i in 0..10 {
            assert_abs_diff_eq!(state.theta_hat()[i], ls[i], epsilon = 1e-5);
        }
    }

    #[test]
    fn theta_matches_dense_formula() {
        let mut rng = StdRng::seed_from_u64(13);
        let data = random_data(&mut rng, 120);
        let prior = PriorSpec::default();
        let state = fit(&data, 9, 4, &prior).unwrap();
        let kv = state.knots().clone();
        let b = design_matrix(&kv, data.xs());
        let y = DVector::from_column_slice(data.ys());
        let m = b.transpose() * &b + DMatrix::identity(9, 9) * 0.1;
        let want = m.lu().solve(&(b.transpose() * y)).unwrap();
        for i in 0..9 {
            assert_abs_diff_eq!(state.theta_hat()[i], want[i], epsilon = 1e-9);
        }
        // mean_at agrees with the dense formula at arbitrary points
        for &x in &[0.0, 0.31, 0.77, 1.0] {
            let bv = DVector::from_column_slice(&basis::eval(&kv, x).unwrap().to_dense());
            assert_abs_diff_eq!(state.mean_at(x).unwrap(), bv.dot(&want), epsilon = 1e-9);
        }
    }

    #[test]
    fn constant_coefficients_constant_mean() {
        let mut rng = StdRng::seed_from_u64(17);
        let data = random_data(&mut rng, 50);
        let mut state = fit(&data, 8, 4, &PriorSpec::default()).unwrap();
        state.theta_hat = vec![3.25; 8];
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            assert_abs_diff_eq!(state.mean_at(x).unwrap(), 3.25, epsilon = 1e-12);
        }
        // clamped basis: mean at 0 is the first coefficient
        state.theta_hat = (0..8).map(|i| i as f64).collect();
        assert_abs_diff_eq!(state.mean_at(0.0).unwrap(), 0.0, epsilon = 1e-12);
        state.theta_hat[0] = -4.5;
        assert_abs_diff_eq!(state.mean_at(0.0).unwrap(), -4.5, epsilon = 1e-12);
    }

    #[test]
    fn sigma_matches_dense_marginal_likelihood_oracle() {
        // literal form: sigma^2 = n^{-1} (Y - B eta)' (B Omega B' + I)^{-1} (Y - B eta)
        let mut rng = StdRng::seed_from_u64(21);
        for n in [30usize, 60, 100] {
            let data = random_data(&mut rng, n);
            let prior = PriorSpec::default();
            let state = fit(&data, 8, 4, &prior).unwrap();
            let b = design_matrix(state.knots(), data.xs());
            let omega = DMatrix::identity(8, 8) * 10.0;
            let big = &b * omega * b.transpose() + DMatrix::identity(n, n);
            let y = DVector::from_column_slice(data.ys());
            let want = (y.transpose() * big.lu().solve(&y).unwrap())[(0, 0)] / n as f64;
            assert_abs_diff_eq!(state.sigma_hat().powi(2), want, epsilon = 1e-9);
        }
    }

    #[test]
    fn var_at_properties() {
        let mut rng = StdRng::seed_from_u64(25);
        let data = random_data(&mut rng, 150);
        let state = fit(&data, 10, 4, &PriorSpec::default()).unwrap();
        // dense oracle for the quadratic form
        let b = design_matrix(state.knots(), data.xs());
        let m = (b.transpose() * &b + DMatrix::identity(10, 10) * 0.1)
            .try_inverse()
            .unwrap();
        let s2 = state.sigma_hat().powi(2);
        for &x in &[0.05, 0.5, 0.95] {
            let bv = DVector::from_column_slice(&basis::eval(state.knots(), x).unwrap().to_dense());
            let want = s2 * (bv.transpose() * &m * &bv)[(0, 0)];
            assert_abs_diff_eq!(state.var_at(x).unwrap(), want, epsilon = 1e-10);
            assert!(state.var_at(x).unwrap() > 0.0);
        }
    }

    #[test]
    fn variance_shrinks_with_sample_size() {
        // same truth, growing n, fixed J: posterior variance at 0.5 decreases
        let mut prev = f64::INFINITY;
        for n in [100usize, 400, 1600] {
            let mut rng = StdRng::seed_from_u64(31);
            let data = random_data(&mut rng, n);
            let state = fit(&data, 8, 4, &PriorSpec::default()).unwrap();
            let v = state.var_at(0.5).unwrap();
            assert!(v < prev, "var did not decrease at n = {n}");
            prev = v;
        }
    }

    #[test]
    fn mean_sup_bounded_by_coefficient_sup() {
        let mut rng = StdRng::seed_from_u64(37);
        let data = random_data(&mut rng, 80);
        let state = fit(&data, 12, 4, &PriorSpec::default()).unwrap();
        let coef_sup = state
            .theta_hat()
            .iter()
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        let mean_sup = state
            .mean_on_grid(512)
            .unwrap()
            .iter()
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(mean_sup <= coef_sup + 1e-12);
    }

    #[test]
    fn degenerate_small_n_still_fits() {
        // n < J: the prior precision keeps the system positive definite
        let data = Dataset::new(vec![0.2, 0.5, 0.9], vec![1.0, 2.0, 0.5]).unwrap();
        let state = fit(&data, 8, 4, &PriorSpec::default()).unwrap();
        assert!(state.sigma_hat().is_finite());
    }
}
