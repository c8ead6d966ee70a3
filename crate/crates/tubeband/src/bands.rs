//! Variable-width credible bands and the two comparison constructions,
//! plus the membership test used for coverage counting.

use crate::error::{Error, Result};
use crate::lepski::{self, LepskiConfig, LepskiTrace};
use crate::posterior::{self, Dataset, PosteriorState, PriorSpec};
use crate::tube;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Prior precision standing in for "no prior" in the frequentist comparator.
pub const VANISHING_PRECISION: f64 = 1e-10;

/// Which construction produced a band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandMethod {
    BayesLepskiTube,
    FrequentistTube,
    FixedRadius,
}

impl BandMethod {
    pub fn name(self) -> &'static str {
        match self {
            BandMethod::BayesLepskiTube => "bayes-lepski-tube",
            BandMethod::FrequentistTube => "frequentist-tube",
            BandMethod::FixedRadius => "fixed-radius",
        }
    }
}

impl std::str::FromStr for BandMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bayes-lepski-tube" | "bayes-lepski" | "bayes" => Ok(BandMethod::BayesLepskiTube),
            "frequentist-tube" | "frequentist" => Ok(BandMethod::FrequentistTube),
            "fixed-radius" | "fixed" => Ok(BandMethod::FixedRadius),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

/// Simultaneous band on a grid: center(x) +/- radius(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub grid: Vec<f64>,
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
    pub quantile_w: f64,
    pub arc_length: f64,
    pub selected_j: usize,
    pub sigma_hat: f64,
    pub method: BandMethod,
}

impl Band {
    /// True iff |f_k - center_k| <= radius_k at every grid index (inclusive).
    pub fn contains(&self, f_on_grid: &[f64]) -> Result<bool> {
        if f_on_grid.len() != self.grid.len() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.len(),
                got: f_on_grid.len(),
            });
        }
        Ok(self
            .center
            .iter()
            .zip(&self.radius)
            .zip(f_on_grid)
            .all(|((c, r), f)| (f - c).abs() <= *r))
    }

    pub fn mean_radius(&self) -> f64 {
        self.radius.iter().sum::<f64>() / self.radius.len() as f64
    }

    pub fn lower(&self) -> Vec<f64> {
        self.center
            .iter()
            .zip(&self.radius)
            .map(|(c, r)| c - r)
            .collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.center
            .iter()
            .zip(&self.radius)
            .map(|(c, r)| c + r)
            .collect()
    }

    /// CSV with header `x,center,lower,upper`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,center,lower,upper\n");
        for k in 0..self.grid.len() {
            let (c, r) = (self.center[k], self.radius[k]);
            out.push_str(&format!("{},{},{},{}\n", self.grid[k], c, c - r, c + r));
        }
        out
    }
}

/// Default number of posterior draws for the fixed-radius comparator.
pub const DEFAULT_FIXED_RADIUS_DRAWS: usize = 2000;

fn validate_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidGamma(gamma));
    }
    Ok(())
}

fn band_from_state(
    state: &PosteriorState,
    gamma: f64,
    grid_size: usize,
    method: BandMethod,
) -> Result<Band> {
    let arc = tube::arc_length(state, 16)?;
    let quant = tube::solve_quantile(arc.value, gamma)?;
    let grid: Vec<f64> = posterior::uniform_grid(grid_size).collect();
    let mut center = Vec::with_capacity(grid_size);
    let mut radius = Vec::with_capacity(grid_size);
    for &x in &grid {
        center.push(state.mean_at(x)?);
        radius.push(quant.w * state.var_at(x)?.sqrt());
    }
    Ok(Band {
        grid,
        center,
        radius,
        quantile_w: quant.w,
        arc_length: arc.value,
        selected_j: state.dim(),
        sigma_hat: state.sigma_hat(),
        method,
    })
}

/// The adaptive tube band: Lepski selection, then center(x) = posterior mean
/// and radius(x) = w * posterior sd at the tube quantile w.
pub fn credible_band(
    data: &Dataset,
    gamma: f64,
    cfg: &LepskiConfig,
    prior: &PriorSpec,
) -> Result<(Band, LepskiTrace)> {
    validate_gamma(gamma)?;
    let (trace, state) = lepski::select_with_state(data, cfg, prior)?;
    let band = band_from_state(&state, gamma, cfg.grid_size, BandMethod::BayesLepskiTube)?;
    Ok((band, trace))
}

/// Frequentist comparator: the identical pipeline with the prior precision
/// replaced by a vanishing ridge, making the center a regularized least
/// squares fit.
pub fn frequentist_band(
    data: &Dataset,
    gamma: f64,
    cfg: &LepskiConfig,
) -> Result<(Band, LepskiTrace)> {
    validate_gamma(gamma)?;
    let prior = PriorSpec::with_scalar_precision(VANISHING_PRECISION);
    let (trace, state) = lepski::select_with_state(data, cfg, &prior)?;
    let band = band_from_state(&state, gamma, cfg.grid_size, BandMethod::FrequentistTube)?;
    Ok((band, trace))
}

/// Fixed-radius comparator: same selected dimension and center, constant
/// radius set to the empirical (1-gamma) quantile of the sup-norm of
/// posterior draws around the mean.
pub fn fixed_radius_band<R: Rng + ?Sized>(
    data: &Dataset,
    gamma: f64,
    cfg: &LepskiConfig,
    prior: &PriorSpec,
    draws: usize,
    rng: &mut R,
) -> Result<(Band, LepskiTrace)> {
    validate_gamma(gamma)?;
    if draws < 100 {
        return Err(Error::InvalidConfig(format!(
            "fixed-radius band needs at least 100 posterior draws, got {draws}"
        )));
    }
    let (trace, state) = lepski::select_with_state(data, cfg, prior)?;
    let grid: Vec<f64> = posterior::uniform_grid(cfg.grid_size).collect();
    let j = state.dim();

    // cache the basis slices over the grid once
    let grid_basis: Vec<crate::basis::BasisVector> = grid
        .iter()
        .map(|&x| crate::basis::eval(state.knots(), x))
        .collect::<Result<_>>()?;

    // theta - theta_hat ~ N(0, sigma^2 (B'B + Omega^{-1})^{-1}); a draw is
    // sigma * L^{-T} z with z standard normal
    let sigma = state.sigma_hat();
    let mut sups = Vec::with_capacity(draws);
    for _ in 0..draws {
        let z: Vec<f64> = (0..j).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        let dev = state.factor().solve_transposed_lower(&z)?;
        let sup = grid_basis
            .iter()
            .map(|bv| bv.dot(&dev).abs())
            .fold(0.0, f64::max);
        sups.push(sup);
    }
    sups.sort_by(|a, b| a.partial_cmp(b).expect("sup norms are finite"));
    // empirical (1-gamma) quantile, inclusive index convention
    let idx = (((1.0 - gamma) * draws as f64).ceil() as usize)
        .clamp(1, draws)
        - 1;
    let r = sups[idx];

    let mut center = Vec::with_capacity(grid.len());
    for &x in &grid {
        center.push(state.mean_at(x)?);
    }
    let band = Band {
        radius: vec![r; grid.len()],
        grid,
        center,
        quantile_w: f64::NAN,
        arc_length: f64::NAN,
        selected_j: j,
        sigma_hat: sigma,
        method: BandMethod::FixedRadius,
    };
    Ok((band, trace))
}
