//! Monte Carlo coverage harness: draws replicated datasets from the bump
//! regression truth, builds each enabled band, and accumulates coverage
//! and radius statistics deterministically.

use crate::bands::{self, Band, BandMethod};
use crate::error::{Error, Result};
use crate::lepski::LepskiConfig;
use crate::posterior::{self, Dataset, PriorSpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Regression truth f0(x) = 2x - x^3 + exp(-50 (x - 1/2)^2).
pub fn f0_default(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::DomainError(x));
    }
    Ok(2.0 * x - x.powi(3) + (-50.0 * (x - 0.5) * (x - 0.5)).exp())
}

/// The function whose coverage is being measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Truth {
    /// The bump truth [`f0_default`].
    PaperDefault,
    /// A spline truth b(x)' coeffs on a uniform clamped basis of the given order.
    Coefficients { q: usize, values: Vec<f64> },
}

impl Truth {
    pub fn value_at(&self, x: f64) -> Result<f64> {
        match self {
            Truth::PaperDefault => f0_default(x),
            Truth::Coefficients { q, values } => {
                let kv = crate::basis::make_knots(values.len(), *q, crate::basis::KnotScheme::Uniform)?;
                Ok(crate::basis::eval(&kv, x)?.dot(values))
            }
        }
    }

    pub fn on_grid(&self, grid_size: usize) -> Result<Vec<f64>> {
        match self {
            Truth::PaperDefault => posterior::uniform_grid(grid_size)
                .map(f0_default)
                .collect(),
            Truth::Coefficients { q, values } => {
                let kv = crate::basis::make_knots(values.len(), *q, crate::basis::KnotScheme::Uniform)?;
                posterior::uniform_grid(grid_size)
                    .map(|x| Ok(crate::basis::eval(&kv, x)?.dot(values)))
                    .collect()
            }
        }
    }
}

/// Monte Carlo study configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub reps: usize,
    pub gamma: f64,
    pub sigma0_sq: f64,
    pub truth: Truth,
    pub methods: Vec<BandMethod>,
    pub seed: u64,
    pub desk_scale: bool,
    pub fixed_radius_draws: usize,
    pub record_replicates: bool,
}

impl SimConfig {
    /// Desk-scale preset: 300 replicates.
    pub fn desk_scale(n: usize, seed: u64) -> Self {
        SimConfig {
            n,
            reps: 300,
            gamma: 0.05,
            sigma0_sq: 0.1,
            truth: Truth::PaperDefault,
            methods: vec![
                BandMethod::BayesLepskiTube,
                BandMethod::FrequentistTube,
                BandMethod::FixedRadius,
            ],
            seed,
            desk_scale: true,
            fixed_radius_draws: bands::DEFAULT_FIXED_RADIUS_DRAWS,
            record_replicates: false,
        }
    }

    /// Full-scale preset: 1000 replicates, as in the reference study.
    pub fn full_scale(n: usize, seed: u64) -> Self {
        SimConfig {
            reps: 1000,
            desk_scale: false,
            ..Self::desk_scale(n, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if self.n < 1 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if self.sigma0_sq < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "sigma0_sq = {} must be nonnegative",
                self.sigma0_sq
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidGamma(self.gamma));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods enabled".into()));
        }
        Ok(())
    }
}

/// Per-replicate RNG derivation: mixes (master seed, replicate index)
/// through splitmix64 into an independent ChaCha stream, with a separate
/// stream lane for data generation and for posterior sampling. Execution
/// order of replicates therefore cannot change any draw.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn replicate_rng(seed: u64, rep_index: usize, lane: u64) -> ChaCha8Rng {
    let derived = splitmix64(seed ^ splitmix64(rep_index as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(derived);
    rng.set_stream(lane);
    rng
}

/// Draws the dataset for one replicate: X_i = i/n and Y_i = f0(X_i) + eps_i
/// with eps_i ~ N(0, sigma0_sq).
pub fn generate(cfg: &SimConfig, rep_index: usize) -> Result<Dataset> {
    let mut rng = replicate_rng(cfg.seed, rep_index, 0);
    let n = cfg.n;
    let sd = cfg.sigma0_sq.sqrt();
    let xs: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
    let ys = xs
        .iter()
        .map(|&x| Ok(cfg.truth.value_at(x)? + sd * rng.sample::<f64, _>(StandardNormal)))
        .collect::<Result<Vec<f64>>>()?;
    Dataset::new(xs, ys)
}

/// Outcome of one method on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub method: BandMethod,
    pub covered: Option<bool>,
    pub mean_radius: Option<f64>,
    pub selected_j: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub outcomes: Vec<ReplicateOutcome>,
}

/// Aggregated results for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: BandMethod,
    pub succeeded: usize,
    pub failures: usize,
    pub covered: usize,
    pub coverage: f64,
    pub coverage_se: f64,
    pub mean_radius: f64,
    pub mean_selected_j: f64,
}

/// Full study report; serializes to JSON byte-identically for a fixed
/// config and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SimConfig,
    pub grid_size: usize,
    pub methods: Vec<MethodSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<Vec<ReplicateRecord>>,
}

fn run_replicate(cfg: &SimConfig, lepski: &LepskiConfig, truth_grid: &[f64], rep: usize) -> Result<ReplicateRecord> {
    let data = generate(cfg, rep)?;
    let prior = PriorSpec::default();
    let mut outcomes = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let built: Result<Band> = match method {
            BandMethod::BayesLepskiTube => {
                bands::credible_band(&data, cfg.gamma, lepski, &prior).map(|(b, _)| b)
            }
            BandMethod::FrequentistTube => {
                bands::frequentist_band(&data, cfg.gamma, lepski).map(|(b, _)| b)
            }
            BandMethod::FixedRadius => {
                let mut rng = replicate_rng(cfg.seed, rep, 1);
                bands::fixed_radius_band(
                    &data,
                    cfg.gamma,
                    lepski,
                    &prior,
                    cfg.fixed_radius_draws,
                    &mut rng,
                )
                .map(|(b, _)| b)
            }
        };
        outcomes.push(match built {
            Ok(band) => ReplicateOutcome {
                method,
                covered: Some(band.contains(truth_grid)?),
                mean_radius: Some(band.mean_radius()),
                selected_j: Some(band.selected_j),
                error: None,
            },
            Err(e) => ReplicateOutcome {
                method,
                covered: None,
                mean_radius: None,
                selected_j: None,
                error: Some(e.to_string()),
            },
        });
    }
    Ok(ReplicateRecord { rep, outcomes })
}

/// Runs the full study. Replicates execute in parallel when the `parallel`
/// feature is active; the merge is by replicate index, so the report is
/// identical for any worker count.
pub fn run(cfg: &SimConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let lepski = LepskiConfig::for_sample_size(cfg.n);
    let truth_grid = cfg.truth.on_grid(lepski.grid_size)?;

    let records = run_all(cfg, &lepski, &truth_grid)?;

    let mut methods = Vec::with_capacity(cfg.methods.len());
    for (mi, &method) in cfg.methods.iter().enumerate() {
        let mut covered = 0usize;
        let mut succeeded = 0usize;
        let mut failures = 0usize;
        let mut radius_sum = 0.0;
        let mut j_sum = 0usize;
        for rec in &records {
            let out = &rec.outcomes[mi];
            match out.covered {
                Some(c) => {
                    succeeded += 1;
                    covered += c as usize;
                    radius_sum += out.mean_radius.unwrap_or(0.0);
                    j_sum += out.selected_j.unwrap_or(0);
                }
                None => failures += 1,
            }
        }
        let coverage = if succeeded > 0 {
            covered as f64 / succeeded as f64
        } else {
            0.0
        };
        let coverage_se = if succeeded > 0 {
            (coverage * (1.0 - coverage) / succeeded as f64).sqrt()
        } else {
            0.0
        };
        methods.push(MethodSummary {
            method,
            succeeded,
            failures,
            covered,
            coverage,
            coverage_se,
            mean_radius: if succeeded > 0 {
                radius_sum / succeeded as f64
            } else {
                0.0
            },
            mean_selected_j: if succeeded > 0 {
                j_sum as f64 / succeeded as f64
            } else {
                0.0
            },
        });
    }

    Ok(SimulationReport {
        config: cfg.clone(),
        grid_size: lepski.grid_size,
        replicates: cfg.record_replicates.then_some(records),
        methods,
    })
}

#[cfg(feature = "parallel")]
fn run_all(
    cfg: &SimConfig,
    lepski: &LepskiConfig,
    truth_grid: &[f64],
) -> Result<Vec<ReplicateRecord>> {
    (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replicate(cfg, lepski, truth_grid, rep))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_all(
    cfg: &SimConfig,
    lepski: &LepskiConfig,
    truth_grid: &[f64],
) -> Result<Vec<ReplicateRecord>> {
    (0..cfg.reps)
        .map(|rep| run_replicate(cfg, lepski, truth_grid, rep))
        .collect()
}

/// Coverage table shaped like the reference study: one row per method, one
/// column per sample size.
pub fn coverage_table_csv(reports: &[SimulationReport]) -> String {
    let mut out = String::from("method");
    for r in reports {
        out.push_str(&format!(",n={}", r.config.n));
    }
    out.push('\n');
    if reports.is_empty() {
        return out;
    }
    for (mi, summary) in reports[0].methods.iter().enumerate() {
        out.push_str(summary.method.name());
        for r in reports {
            out.push_str(&format!(",{:.4}", r.methods[mi].coverage));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn truth_reference_values() {
        assert_abs_diff_eq!(f0_default(0.5).unwrap(), 1.875, epsilon = 1e-15);
        assert_abs_diff_eq!(f0_default(0.0).unwrap(), (-12.5f64).exp(), epsilon = 1e-18);
        assert_abs_diff_eq!(f0_default(0.0).unwrap(), 3.7267e-6, epsilon = 1e-9);
        assert!(f0_default(1.2).is_err());
    }

    #[test]
    fn truth_symmetry_of_bump_part() {
        // f0(1/2 + h) + f0(1/2 - h) isolates the even part: the bump is even
        // around 1/2 and the polynomial contributes its direct values
        for h in [0.1, 0.25, 0.4] {
            let s = f0_default(0.5 + h).unwrap() + f0_default(0.5 - h).unwrap();
            let poly =
                |x: f64| 2.0 * x - x.powi(3);
            let want = poly(0.5 + h) + poly(0.5 - h) + 2.0 * (-50.0 * h * h).exp();
            assert_abs_diff_eq!(s, want, epsilon = 1e-14);
        }
    }

    #[test]
    fn spline_truth_evaluates() {
        let t = Truth::Coefficients {
            q: 4,
            values: vec![1.0; 6],
        };
        assert_abs_diff_eq!(t.value_at(0.3).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn generate_noiseless_hits_truth() {
        let mut cfg = SimConfig::desk_scale(50, 1);
        cfg.sigma0_sq = 0.0;
        let d = generate(&cfg, 0).unwrap();
        for (i, (&x, &y)) in d.xs().iter().zip(d.ys()).enumerate() {
            assert_eq!(x, (i + 1) as f64 / 50.0);
            assert_eq!(y, f0_default(x).unwrap());
        }
    }

    #[test]
    fn generate_is_deterministic_per_replicate() {
        let cfg = SimConfig::desk_scale(40, 99);
        let a = generate(&cfg, 7).unwrap();
        let b = generate(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = generate(&cfg, 8).unwrap();
        assert_ne!(a.ys(), c.ys());
    }

    #[test]
    fn noise_variance_law_of_large_numbers() {
        let mut cfg = SimConfig::desk_scale(100_000, 2024);
        cfg.sigma0_sq = 0.1;
        let d = generate(&cfg, 0).unwrap();
        let resid: Vec<f64> = d
            .xs()
            .iter()
            .zip(d.ys())
            .map(|(&x, &y)| y - f0_default(x).unwrap())
            .collect();
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        let var = resid.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
            / (resid.len() - 1) as f64;
        assert!((var - 0.1).abs() <= 0.005, "sample variance {var}");
    }

    #[test]
    fn single_replicate_coverage_is_binary() {
        let mut cfg = SimConfig::desk_scale(120, 5);
        cfg.reps = 1;
        cfg.methods = vec![BandMethod::BayesLepskiTube];
        let report = run(&cfg).unwrap();
        let cov = report.methods[0].coverage;
        assert!(cov == 0.0 || cov == 1.0);
        assert_eq!(
            report.methods[0].succeeded + report.methods[0].failures,
            cfg.reps
        );
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimConfig::desk_scale(100, 0);
        cfg.reps = 0;
        assert!(run(&cfg).is_err());
        let mut cfg = SimConfig::desk_scale(100, 0);
        cfg.gamma = 1.2;
        assert!(cfg.validate().is_err());
        let mut cfg = SimConfig::desk_scale(100, 0);
        cfg.methods.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn report_json_roundtrip_and_determinism() {
        let mut cfg = SimConfig::desk_scale(80, 31);
        cfg.reps = 4;
        cfg.methods = vec![BandMethod::BayesLepskiTube];
        let r1 = run(&cfg).unwrap();
        let r2 = run(&cfg).unwrap();
        let j1 = serde_json::to_string_pretty(&r1).unwrap();
        let j2 = serde_json::to_string_pretty(&r2).unwrap();
        assert_eq!(j1, j2);
        let back: SimulationReport = serde_json::from_str(&j1).unwrap();
        assert_eq!(back, r1);
    }

    #[test]
    fn table_csv_shape() {
        let mut cfg = SimConfig::desk_scale(80, 8);
        cfg.reps = 2;
        cfg.methods = vec![BandMethod::BayesLepskiTube, BandMethod::FrequentistTube];
        let r1 = run(&cfg).unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.n = 120;
        let r2 = run(&cfg2).unwrap();
        let csv = coverage_table_csv(&[r1, r2]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "method,n=80,n=120");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("bayes-lepski-tube,"));
        assert!(lines[2].starts_with("frequentist-tube,"));
    }
}
