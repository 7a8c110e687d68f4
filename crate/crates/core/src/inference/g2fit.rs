//! Fits of the antibunching dip.

use super::lm::{CurveFit, LmConfig};
use super::{usable_sigma, FitResult};
use crate::correlate::{G2Curve, G2Kind};
use crate::error::{invalid, Error, Result};

/// Pins parameters of the dip model `baseline·(1 − contrast·exp(−k|τ|))`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DipOptions {
    pub fixed_contrast: Option<f64>,
    pub fixed_baseline: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ThreeLevelOptions {
    pub fixed_bunching: Option<f64>,
}

fn dip_model(tau: f64, p: &[f64]) -> f64 {
    p[2] * (1.0 - p[1] * (-p[0] * tau.abs()).exp())
}

fn three_level_model(tau: f64, p: &[f64]) -> f64 {
    let t = tau.abs();
    let a = p[2];
    1.0 - (1.0 + a) * (-p[0] * t).exp() + a * (-p[1] * t).exp()
}

fn check_curve(curve: &G2Curve) -> Result<()> {
    if curve.len() < 10 {
        return Err(invalid("curve", format!("need at least 10 points, got {}", curve.len())));
    }
    if curve.values.iter().chain(&curve.delays_ns).any(|v| !v.is_finite()) {
        return Err(invalid("curve", "non-finite values"));
    }
    Ok(())
}

/// Counts per unit of a raw normalized curve, recovered from σ² = C/L on
/// the non-empty bins. Other curves are not plain scaled counts.
fn poisson_scale(curve: &G2Curve) -> Option<f64> {
    if curve.kind != G2Kind::RawNormalized || usable_sigma(&curve.sigma).is_none() {
        return None;
    }
    let (mut sum_y, mut sum_var) = (0.0, 0.0);
    for (y, s) in curve.values.iter().zip(&curve.sigma) {
        if *y > 0.0 {
            sum_y += y;
            sum_var += s * s;
        }
    }
    (sum_var > 0.0).then(|| sum_y / sum_var)
}

fn solve<F: Fn(f64, &[f64]) -> f64>(
    fit: CurveFit<'_, F>,
    names: &[&str],
    init: &[f64],
    fixed: &[bool],
    scale: Option<f64>,
) -> FitResult {
    let config = LmConfig::default();
    match scale {
        Some(l) => fit.solve_poisson(names, init, fixed, &config, l),
        None => fit.solve(names, init, fixed, &config),
    }
}

/// Initial (k, contrast, baseline) from the curve's shape.
fn dip_guess(curve: &G2Curve) -> [f64; 3] {
    let max_abs = curve.delays_ns.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let tail: Vec<f64> = curve
        .delays_ns
        .iter()
        .zip(&curve.values)
        .filter(|(t, _)| t.abs() >= 0.6 * max_abs)
        .map(|(_, v)| *v)
        .collect();
    let baseline = if tail.is_empty() {
        1.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    let baseline = if baseline > 0.0 { baseline } else { 1.0 };
    let (y0, _) = curve.at_zero().unwrap_or((0.0, 0.0));
    let contrast = (1.0 - y0 / baseline).clamp(0.05, 1.5);

    let mut order: Vec<usize> = (0..curve.len()).collect();
    order.sort_by(|&a, &b| curve.delays_ns[a].abs().total_cmp(&curve.delays_ns[b].abs()));
    let target = baseline * (1.0 - contrast * (-1.0f64).exp());
    let k = order
        .iter()
        .find(|&&i| curve.delays_ns[i] != 0.0 && curve.values[i] >= target)
        .map(|&i| 1.0 / curve.delays_ns[i].abs())
        .unwrap_or(10.0 / max_abs.max(1e-9));
    [k, contrast, baseline]
}

/// Fits `baseline·(1 − contrast·exp(−k|τ|))` with k in ns⁻¹.
pub fn fit_exponential_dip(curve: &G2Curve) -> Result<FitResult> {
    fit_exponential_dip_with(curve, &DipOptions::default())
}

pub fn fit_exponential_dip_with(curve: &G2Curve, options: &DipOptions) -> Result<FitResult> {
    check_curve(curve)?;
    let mut init = dip_guess(curve);
    if let Some(c) = options.fixed_contrast {
        init[1] = c;
    }
    if let Some(b) = options.fixed_baseline {
        init[2] = b;
    }
    let fixed = [false, options.fixed_contrast.is_some(), options.fixed_baseline.is_some()];
    let fit = CurveFit {
        x: &curve.delays_ns,
        y: &curve.values,
        sigma: usable_sigma(&curve.sigma),
        model: dip_model,
    };
    let names = ["k_per_ns", "contrast", "baseline"];
    let mut fit = solve(fit, &names, &init, &fixed, poisson_scale(curve)).ensure_converged()?;

    let k = fit.parameters[0].value;
    if !(k > 0.0) {
        return Err(Error::Degenerate(format!("dip width k = {k} ns⁻¹ is not positive")));
    }
    let (a, b) = (fit.parameters[1].value, fit.parameters[2].value);
    let var = (1.0 - a).powi(2) * fit.covariance_of(2, 2) + b * b * fit.covariance_of(1, 1)
        - 2.0 * b * (1.0 - a) * fit.covariance_of(1, 2);
    fit.push_derived("g2_zero", b * (1.0 - a), Some(var.max(0.0).sqrt()));
    let sk = fit.parameters[0].uncertainty;
    fit.push_derived("dip_time_ns", 1.0 / k, sk.map(|s| s / (k * k)));
    Ok(fit)
}

/// Fits `1 − (1+a)·exp(−λ₁|τ|) + a·exp(−λ₂|τ|)`, rates in ns⁻¹, λ₁ ≥ λ₂.
pub fn fit_three_level(curve: &G2Curve) -> Result<FitResult> {
    fit_three_level_with(curve, &ThreeLevelOptions::default())
}

pub fn fit_three_level_with(curve: &G2Curve, options: &ThreeLevelOptions) -> Result<FitResult> {
    check_curve(curve)?;
    let sigma = usable_sigma(&curve.sigma);
    let weight = |i: usize| sigma.map_or(1.0, |s| 1.0 / (s[i] * s[i]));

    let [k0, _, _] = dip_guess(curve);
    let init = match options.fixed_bunching {
        // Same start as the dip fit, which this nests when a = 0.
        Some(a) => [k0, k0 * 0.01, a],
        None => {
            let lambda1 = fit_exponential_dip(curve).map_or(k0, |f| f.parameters[0].value);
            // Scan λ₂; the model is linear in a for fixed rates.
            let mut best = (f64::INFINITY, lambda1 * 0.01, 0.0);
            for step in 0..=60 {
                let l2 = lambda1 * 10f64.powf(-4.0 + 4.0 * step as f64 / 60.0) * 0.9;
                let (mut num, mut den) = (0.0, 0.0);
                for i in 0..curve.len() {
                    let t = curve.delays_ns[i].abs();
                    let e1 = (-lambda1 * t).exp();
                    let u = (-l2 * t).exp() - e1;
                    let z = curve.values[i] - 1.0 + e1;
                    num += weight(i) * z * u;
                    den += weight(i) * u * u;
                }
                let a = if den > 0.0 { num / den } else { 0.0 };
                let chi2: f64 = (0..curve.len())
                    .map(|i| {
                        let r = curve.values[i] - three_level_model(curve.delays_ns[i], &[lambda1, l2, a]);
                        weight(i) * r * r
                    })
                    .sum();
                if chi2 < best.0 {
                    best = (chi2, l2, a);
                }
            }
            [lambda1, best.1, best.2]
        }
    };

    let fixed = [false, options.fixed_bunching.is_some(), options.fixed_bunching.is_some()];
    let fit = CurveFit {
        x: &curve.delays_ns,
        y: &curve.values,
        sigma,
        model: three_level_model,
    };
    let names = ["lambda1_per_ns", "lambda2_per_ns", "bunching"];
    let mut fit = solve(fit, &names, &init, &fixed, poisson_scale(curve)).ensure_converged()?;

    if options.fixed_bunching.is_none() && fit.parameters[1].value > fit.parameters[0].value {
        // Relabel: swapping the rates maps a to −(1 + a).
        let n = fit.parameters.len();
        fit.parameters.swap(0, 1);
        let a = fit.parameters[2].value;
        fit.parameters[2].value = -(1.0 + a);
        let cov = fit.covariance.clone();
        let perm = [1usize, 0, 2];
        let sign = [1.0, 1.0, -1.0];
        for i in 0..n {
            for j in 0..n {
                fit.covariance[i * n + j] = sign[i] * sign[j] * cov[perm[i] * n + perm[j]];
            }
        }
    }
    let (l1, l2) = (fit.parameters[0].value, fit.parameters[1].value);
    if options.fixed_bunching.is_none() && (l1 - l2).abs() <= 1e-3 * l1.abs() {
        fit.warnings.push(format!(
            "degenerate rates: lambda1 = {l1} and lambda2 = {l2} ns⁻¹ are not separable"
        ));
    }
    if !(l1 > 0.0) {
        return Err(Error::Degenerate(format!("lambda1 = {l1} ns⁻¹ is not positive")));
    }
    let peak = curve
        .delays_ns
        .iter()
        .map(|&t| three_level_model(t, &[l1, l2, fit.parameters[2].value]))
        .fold(f64::NEG_INFINITY, f64::max);
    fit.push_derived("max_g2", peak, None);
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(f: impl Fn(f64) -> f64, half: f64, step: f64) -> G2Curve {
        let n = (half / step) as i64;
        let delays: Vec<f64> = (-n..=n).map(|i| i as f64 * step).collect();
        G2Curve {
            values: delays.iter().map(|&t| f(t)).collect(),
            sigma: vec![0.01; delays.len()],
            delays_ns: delays,
            kind: G2Kind::BackgroundCorrected,
        }
    }

    #[test]
    fn exact_dip_recovery() {
        let curve = synthetic(|t| 1.0 - (-0.1 * t.abs()).exp(), 100.0, 1.0);
        let fit = fit_exponential_dip(&curve).unwrap();
        assert!((fit.value("k_per_ns").unwrap() - 0.1).abs() < 1e-7);
        assert!((fit.value("contrast").unwrap() - 1.0).abs() < 1e-7);
        assert!(fit.value("g2_zero").unwrap().abs() < 1e-7);
    }

    #[test]
    fn too_few_points() {
        let curve = synthetic(|t| 1.0 - (-0.1 * t.abs()).exp(), 4.0, 1.0);
        assert!(fit_exponential_dip(&curve).is_err());
    }

    #[test]
    fn three_level_nests_dip() {
        let curve = synthetic(|t| 1.0 - (-0.08 * t.abs()).exp(), 150.0, 1.0);
        let fit = fit_three_level(&curve).unwrap();
        assert!((fit.value("lambda1_per_ns").unwrap() - 0.08).abs() < 1e-6);
        assert!(fit.value("bunching").unwrap().abs() < 1e-6);
    }

    #[test]
    fn three_level_exact_recovery() {
        let curve = synthetic(|t| 1.0 - 1.4 * (-0.09 * t.abs()).exp() + 0.4 * (-0.004 * t.abs()).exp(), 800.0, 2.0);
        let fit = fit_three_level(&curve).unwrap();
        assert!((fit.value("lambda1_per_ns").unwrap() - 0.09).abs() < 1e-7);
        assert!((fit.value("lambda2_per_ns").unwrap() - 0.004).abs() < 1e-9);
        assert!((fit.value("bunching").unwrap() - 0.4).abs() < 1e-7);
        assert!(fit.value("max_g2").unwrap() > 1.0);
    }
}
