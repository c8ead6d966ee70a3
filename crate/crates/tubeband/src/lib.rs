//! Adaptive Bayesian simultaneous credible bands for nonparametric
//! regression with a B-spline series prior.
//!
//! The pipeline: fit conjugate posteriors over a ladder of basis dimensions,
//! pick the dimension by a Lepski-style downward scan, and turn the selected
//! posterior into a variable-width band whose quantile comes from the
//! volume-of-tube formula for the supremum of the standardized process.
//! A Monte Carlo harness measures frequentist coverage of the construction.

pub mod bands;
pub mod basis;
pub mod error;
pub mod lepski;
pub mod linalg;
pub mod posterior;
pub mod sim;
pub mod tube;

pub use bands::{credible_band, fixed_radius_band, frequentist_band, Band, BandMethod};
pub use basis::{KnotScheme, KnotVector};
pub use error::{Error, Result};
pub use lepski::{LepskiConfig, LepskiTrace, ThresholdMode};
pub use posterior::{Dataset, PosteriorState, PriorSpec};
pub use sim::{SimConfig, SimulationReport};
pub use tube::{solve_quantile, ArcLength, TubeQuantile};

/// Library version embedded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
