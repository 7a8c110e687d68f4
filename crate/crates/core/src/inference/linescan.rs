use super::lm::{CurveFit, LmConfig};
use super::FitResult;
use crate::error::{invalid, Error, Result};

/// `background + signal·exp(−(x − center)²/(2·width²))`.
pub fn gaussian_profile(x: f64, signal: f64, background: f64, center: f64, width: f64) -> f64 {
    background + signal * (-(x - center).powi(2) / (2.0 * width * width)).exp()
}

fn model(x: f64, p: &[f64]) -> f64 {
    gaussian_profile(x, p[0], p[1], p[2], p[3])
}

/// Gaussian fit of a confocal line scan. Returns S, B, center and width
/// (µm), plus ρ = S/(S+B), S/B and the FWHM.
pub fn fit_linescan(positions_um: &[f64], counts: &[f64]) -> Result<FitResult> {
    if positions_um.len() != counts.len() {
        return Err(invalid("linescan", "positions and counts differ in length"));
    }
    if positions_um.len() < 6 {
        return Err(invalid("linescan", format!("need at least 6 points, got {}", counts.len())));
    }
    if counts.iter().chain(positions_um).any(|v| !v.is_finite()) {
        return Err(invalid("linescan", "non-finite input"));
    }

    let mut sorted = counts.to_vec();
    sorted.sort_by(f64::total_cmp);
    let background = sorted[sorted.len() / 4];
    let (imax, &peak) = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let signal = peak - background;
    if !(signal > 0.0) {
        return Err(Error::Degenerate("flat scan, no emitter".into()));
    }
    let half = background + signal / 2.0;
    let above: Vec<f64> = positions_um
        .iter()
        .zip(counts)
        .filter(|(_, &c)| c >= half)
        .map(|(x, _)| *x)
        .collect();
    let span = positions_um.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - positions_um.iter().cloned().fold(f64::INFINITY, f64::min);
    let fwhm_guess = above.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - above.iter().cloned().fold(f64::INFINITY, f64::min);
    let width = if fwhm_guess > 0.0 {
        fwhm_guess / 2.3548
    } else {
        span / 20.0
    };

    let sigma: Vec<f64> = counts.iter().map(|c| c.max(1.0).sqrt()).collect();
    let mut fit = CurveFit {
        x: positions_um,
        y: counts,
        sigma: Some(&sigma),
        model,
    }
    .solve_poisson(
        &["signal", "background", "center_um", "width_um"],
        &[signal, background.max(0.0), positions_um[imax], width],
        &[false; 4],
        &LmConfig::default(),
        1.0,
    )
    .ensure_converged()?;

    fit.parameters[3].value = fit.parameters[3].value.abs();
    let s = fit.parameters[0].value;
    let b = fit.parameters[1].value;
    if !(s > 0.0) {
        return Err(Error::Degenerate(format!("fitted signal {s} is not positive")));
    }
    let (vs, vb, csb) = (fit.covariance_of(0, 0), fit.covariance_of(1, 1), fit.covariance_of(0, 1));
    let total = s + b;
    // ∂ρ/∂S = B/(S+B)², ∂ρ/∂B = −S/(S+B)²
    let var_rho = (b * b * vs + s * s * vb - 2.0 * s * b * csb) / total.powi(4);
    fit.push_derived("rho", s / total, Some(var_rho.max(0.0).sqrt()));
    if b > 0.0 {
        let var_ratio = vs / (b * b) + s * s * vb / b.powi(4) - 2.0 * s * csb / b.powi(3);
        fit.push_derived("signal_to_background", s / b, Some(var_ratio.max(0.0).sqrt()));
    }
    let k = 2.0 * (2.0 * std::f64::consts::LN_2).sqrt();
    let sw = fit.parameters[3].uncertainty;
    fit.push_derived("fwhm_um", k * fit.parameters[3].value, sw.map(|u| k * u));
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_signal_to_background_20() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|&x| gaussian_profile(x, 700.0, 35.0, 2.5, 0.21)).collect();
        let fit = fit_linescan(&x, &y).unwrap();
        assert!((fit.value("rho").unwrap() - 20.0 / 21.0).abs() < 1e-8);
        assert!((fit.value("signal_to_background").unwrap() - 20.0).abs() < 1e-6);
        assert!((fit.value("fwhm_um").unwrap() - 0.21 * 2.354_820_045).abs() < 1e-7);
    }

    #[test]
    fn flat_scan_fails() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert!(matches!(fit_linescan(&x, &[5.0; 20]), Err(Error::Degenerate(_))));
    }
}
