//! Simulation and analysis of photon antibunching from single color centers.
//!
//! The crate is organized along the experiment:
//!
//! - [`photophysics`]: three-state rate model of the emitter, analytic
//!   g²(τ), stochastic emission trajectories and lifetime-in-medium formulas.
//! - [`detection`]: Hanbury Brown–Twiss chain turning emission into two
//!   detector click streams.
//! - [`correlate`]: coincidence histograms (TAC and exact pair counting),
//!   Poisson normalization and background correction.
//! - [`inference`]: dip, three-level, saturation and line-scan fits,
//!   lifetime extrapolation and source figures of merit.
//!
//! Timestamps are integer picoseconds; rates are s⁻¹ unless a name says otherwise.

pub mod correlate;
pub mod detection;
pub mod error;
pub mod inference;
pub mod photophysics;
pub mod rng;
pub mod stream;

pub use correlate::{BinSpec, CoincidenceHistogram, G2Curve, G2Kind, HistogramMode};
pub use detection::{DetectorConfig, HbtConfig, HbtOutput};
pub use error::{Error, Result};
pub use inference::{FitParameter, FitResult, PowerSweepPoint};
pub use photophysics::{LevelScheme, MediumModel, Occupations, ThreeLevelParams};
pub use stream::PhotonStream;
