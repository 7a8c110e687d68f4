//! Fluorescence saturation curves.

use super::lm::{CurveFit, LmConfig};
use super::FitResult;
use crate::error::{invalid, Error, Result};
use crate::photophysics::{steady_state, LevelScheme};

/// `scale·Γ·p_e` at pump rate `κ·P`, with the template's Γ, k_es, k_sg.
pub fn saturation_model(template: &LevelScheme, power_mw: f64, kappa: f64, scale: f64, beta: f64) -> f64 {
    let scheme = LevelScheme {
        pump_rate: kappa * power_mw,
        pump_shelving_coefficient: beta,
        ..*template
    };
    match steady_state(&scheme) {
        Ok(occ) => scale * template.radiative_rate * occ.excited,
        Err(_) => f64::NAN,
    }
}

/// Peak of the model over all powers: (rate, power at peak or ∞).
fn supremum(template: &LevelScheme, kappa: f64, scale: f64, beta: f64) -> (f64, f64) {
    let gamma = template.radiative_rate;
    let k = template.shelve_rate;
    let q = template.deshelve_rate;
    if beta > 0.0 && q > 0.0 {
        // rate ∝ r / ((β/q)·r² + (1 + β + k/q)·r + Γ + k)
        let r_star = ((gamma + k) * q / beta).sqrt();
        let p_star = r_star / kappa;
        (saturation_model(template, p_star, kappa, scale, beta), p_star)
    } else if k > 0.0 && q == 0.0 {
        (0.0, f64::INFINITY)
    } else {
        let limit = if k > 0.0 { gamma * q / (q + k) } else { gamma };
        (scale * limit, f64::INFINITY)
    }
}

/// Fits detected rate versus pump power (mW, s⁻¹) with the three-state
/// steady state. Free parameters: pump calibration κ (s⁻¹/mW), a detection
/// scale factor, and β when `fit_beta` is set (otherwise the template's β).
pub fn fit_saturation(points: &[(f64, f64)], template: &LevelScheme, fit_beta: bool) -> Result<FitResult> {
    if points.len() < 4 {
        return Err(invalid("points", format!("need at least 4 points, got {}", points.len())));
    }
    template.validate()?;
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    if x.iter().chain(&y).any(|v| !v.is_finite()) || x.iter().any(|&p| p < 0.0) {
        return Err(invalid("points", "powers must be finite and >= 0, rates finite"));
    }
    let p_max = x.iter().cloned().fold(0.0, f64::max);
    if !(p_max > 0.0) {
        return Err(invalid("points", "no positive pump power"));
    }

    // Grid over κ (and β) with the scale solved in closed form.
    let gamma = template.radiative_rate;
    let kappa_mid = (gamma + template.shelve_rate) / p_max;
    let betas: Vec<f64> = if fit_beta {
        std::iter::once(0.0)
            .chain((0..24).map(|i| 10f64.powf(-4.0 + 4.0 * i as f64 / 23.0)))
            .collect()
    } else {
        vec![template.pump_shelving_coefficient]
    };
    let mut best = (f64::INFINITY, kappa_mid, 1.0, betas[0]);
    for i in 0..=60 {
        let kappa = kappa_mid * 10f64.powf(-3.0 + 6.0 * i as f64 / 60.0);
        for &beta in &betas {
            let m: Vec<f64> = x.iter().map(|&p| saturation_model(template, p, kappa, 1.0, beta)).collect();
            let mm: f64 = m.iter().map(|v| v * v).sum();
            if !(mm > 0.0) {
                continue;
            }
            let scale = m.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / mm;
            let chi2: f64 = m.iter().zip(&y).map(|(a, b)| (b - scale * a).powi(2)).sum();
            if chi2 < best.0 {
                best = (chi2, kappa, scale, beta);
            }
        }
    }
    let (_, kappa0, scale0, beta0) = best;

    let tmpl = *template;
    let mut fit = CurveFit {
        x: &x,
        y: &y,
        sigma: None,
        model: move |p: f64, par: &[f64]| saturation_model(&tmpl, p, par[0], par[1], par[2]),
    }
    .solve(
        &["kappa_per_s_per_mw", "scale", "beta"],
        &[kappa0, scale0, beta0],
        &[false, false, !fit_beta],
        &LmConfig::default(),
    )
    .ensure_converged()?;

    let (kappa, scale, beta) = (fit.parameters[0].value, fit.parameters[1].value, fit.parameters[2].value);
    if !(kappa > 0.0) {
        return Err(Error::Degenerate(format!("pump calibration {kappa} is not positive")));
    }
    let (peak, p_peak) = supremum(template, kappa, scale, beta);
    fit.push_derived("plateau_rate_per_s", peak, None);
    if p_peak.is_finite() {
        fit.push_derived("power_at_max_mw", p_peak, None);
        if p_peak > p_max {
            fit.warnings.push("rate maximum lies beyond the scanned powers".into());
        }
    }
    Ok(fit)
}
