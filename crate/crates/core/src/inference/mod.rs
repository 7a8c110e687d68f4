//! Model fitting and single-photon-source figures of merit.

mod g2fit;
mod lifetime;
mod linescan;
pub mod lm;
mod metrics;
mod saturation;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use g2fit::{fit_exponential_dip, fit_exponential_dip_with, fit_three_level, fit_three_level_with, DipOptions, ThreeLevelOptions};
pub use lifetime::{extrapolate_lifetime, PowerSweepPoint};
pub use linescan::{fit_linescan, gaussian_profile};
pub use metrics::{coherent_improvement, estimate_emitter_count, multiphoton_probability, EmitterCount};
pub use saturation::{fit_saturation, saturation_model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParameter {
    pub name: String,
    pub value: f64,
    /// One standard deviation; `None` when the fit did not converge.
    pub uncertainty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: Vec<FitParameter>,
    /// Quantities computed from the fitted parameters.
    pub derived: Vec<FitParameter>,
    /// Row-major covariance of `parameters` (zero rows for fixed ones).
    #[serde(skip)]
    pub covariance: Vec<f64>,
    pub reduced_chi_square: f64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FitResult {
    /// Looks up a fitted or derived quantity by name.
    pub fn get(&self, name: &str) -> Option<&FitParameter> {
        self.parameters
            .iter()
            .chain(&self.derived)
            .find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.get(name).map(|p| p.value)
    }

    pub fn uncertainty(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(|p| p.uncertainty)
    }

    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
            })
        }
    }

    pub(crate) fn covariance_of(&self, a: usize, b: usize) -> f64 {
        let n = self.parameters.len();
        self.covariance.get(a * n + b).copied().unwrap_or(f64::NAN)
    }

    pub(crate) fn push_derived(&mut self, name: &str, value: f64, uncertainty: Option<f64>) {
        self.derived.push(FitParameter {
            name: name.to_string(),
            value,
            uncertainty,
        });
    }
}

/// Weights from a curve's sigmas, or unweighted when any sigma is not positive.
pub(crate) fn usable_sigma(sigma: &[f64]) -> Option<&[f64]> {
    sigma.iter().all(|s| *s > 0.0 && s.is_finite()).then_some(sigma)
}
