use serde::{Deserialize, Serialize};

use super::{FitParameter, FitResult};
use crate::error::{check, invalid, Result};

/// Dip width measured at one pump power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSweepPoint {
    pub power_mw: f64,
    /// k = r + Γ, ns⁻¹.
    pub dip_width_per_ns: f64,
    pub width_uncertainty_per_ns: f64,
}

/// Weighted straight line k = Γ + slope·P; the zero-power intercept is the
/// radiative rate, so τ = 1/Γ.
///
/// Points are weighted by 1/σ² when every uncertainty is positive,
/// otherwise the fit is unweighted and errors are scaled by the residual scatter.
pub fn extrapolate_lifetime(sweep: &[PowerSweepPoint]) -> Result<FitResult> {
    if sweep.len() < 3 {
        return Err(invalid("sweep", format!("need at least 3 points, got {}", sweep.len())));
    }
    for p in sweep {
        check("power_mw", p.power_mw, p.power_mw >= 0.0, "must be >= 0")?;
        check("dip_width", p.dip_width_per_ns, p.dip_width_per_ns > 0.0, "must be > 0")?;
    }
    let weighted = sweep
        .iter()
        .all(|p| p.width_uncertainty_per_ns > 0.0 && p.width_uncertainty_per_ns.is_finite());
    let w = |p: &PowerSweepPoint| {
        if weighted {
            1.0 / (p.width_uncertainty_per_ns * p.width_uncertainty_per_ns)
        } else {
            1.0
        }
    };

    let s: f64 = sweep.iter().map(w).sum();
    let sx: f64 = sweep.iter().map(|p| w(p) * p.power_mw).sum();
    let mean_x = sx / s;
    // centred sums keep the normal equations well conditioned
    let sxx: f64 = sweep.iter().map(|p| w(p) * (p.power_mw - mean_x).powi(2)).sum();
    if !(sxx > 1e-300) || sweep.iter().all(|p| p.power_mw == sweep[0].power_mw) {
        return Err(invalid("sweep", "pump powers have no spread"));
    }
    let mean_y = sweep.iter().map(|p| w(p) * p.dip_width_per_ns).sum::<f64>() / s;
    let sxy: f64 = sweep
        .iter()
        .map(|p| w(p) * (p.power_mw - mean_x) * (p.dip_width_per_ns - mean_y))
        .sum();
    let slope = sxy / sxx;
    let gamma = mean_y - slope * mean_x;

    let chi2: f64 = sweep
        .iter()
        .map(|p| w(p) * (p.dip_width_per_ns - gamma - slope * p.power_mw).powi(2))
        .sum();
    let dof = (sweep.len() - 2) as f64;
    let reduced = chi2 / dof;
    let scale = if weighted { 1.0 } else { reduced };
    let var_slope = scale / sxx;
    let var_gamma = scale * (1.0 / s + mean_x * mean_x / sxx);
    let cov = -scale * mean_x / sxx;

    let mut fit = FitResult {
        parameters: vec![
            FitParameter {
                name: "gamma_per_ns".into(),
                value: gamma,
                uncertainty: Some(var_gamma.sqrt()),
            },
            FitParameter {
                name: "slope_per_ns_per_mw".into(),
                value: slope,
                uncertainty: Some(var_slope.sqrt()),
            },
        ],
        derived: Vec::new(),
        covariance: vec![var_gamma, cov, cov, var_slope],
        reduced_chi_square: reduced,
        converged: true,
        iterations: 1,
        warnings: Vec::new(),
    };
    if gamma > 0.0 {
        fit.push_derived("lifetime_ns", 1.0 / gamma, Some(var_gamma.sqrt() / (gamma * gamma)));
    } else {
        fit.warnings
            .push(format!("non-positive intercept {gamma} ns⁻¹, lifetime undefined"));
    }
    Ok(fit)
}
