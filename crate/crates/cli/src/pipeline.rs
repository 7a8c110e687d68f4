//! Simulation and analysis of one experiment, shared by the subcommands.

use hbtsim_core::correlate::{
    background_correct, normalize, pair_histogram_parallel, tac_histogram,
};
use hbtsim_core::detection::{run_hbt, HbtOutput};
use hbtsim_core::inference::{
    estimate_emitter_count, extrapolate_lifetime, fit_exponential_dip, fit_saturation,
    fit_three_level, multiphoton_probability, coherent_improvement,
};
use hbtsim_core::photophysics::simulate_collected_emission;
use hbtsim_core::rng::derive_seed;
use hbtsim_core::{
    CoincidenceHistogram, G2Curve, HistogramMode, LevelScheme, PhotonStream, PowerSweepPoint, Result,
};
use rayon::prelude::*;

use crate::config::{DipModel, ExperimentConfig};
use crate::report::{
    EmitterCountReport, FitSummary, MultiphotonRow, PointReport, Quantity, Report,
};

/// Click streams for one pump power, plus a background-only acquisition
/// through the same detection chain (emitter moved out of the focus).
#[derive(Debug, Clone)]
pub struct PointData {
    pub index: usize,
    pub power_mw: f64,
    pub scheme: LevelScheme,
    pub clicks: HbtOutput,
    pub background: HbtOutput,
}

pub fn point_seed(config: &ExperimentConfig, index: usize) -> u64 {
    derive_seed(config.seed, index as u64)
}

pub fn simulate_point(config: &ExperimentConfig, index: usize) -> Result<PointData> {
    let power_mw = config.acquisition.powers_mw[index];
    let scheme = config.scheme_at(power_mw);
    let seed = point_seed(config, index);
    let duration_ns = config.acquisition.time_per_point_s * 1e9;
    let (hbt, det1, det2) = (config.hbt(), config.detector1.detector(), config.detector2.detector());

    let emission =
        simulate_collected_emission(&scheme, duration_ns, config.emitter.collection_efficiency, derive_seed(seed, 0))?;
    let duration = emission.duration();
    let clicks = run_hbt(&emission, &hbt, &det1, &det2, derive_seed(seed, 1))?;
    drop(emission);
    let dark = PhotonStream::empty(duration, "background");
    let background = run_hbt(&dark, &hbt, &det1, &det2, derive_seed(seed, 2))?;
    Ok(PointData { index, power_mw, scheme, clicks, background })
}

pub fn histogram(
    config: &ExperimentConfig,
    s1: &PhotonStream,
    s2: &PhotonStream,
) -> Result<CoincidenceHistogram> {
    let bins = config.bins();
    match config.histogram.mode {
        HistogramMode::AllPairs => pair_histogram_parallel(s1, s2, bins, rayon::current_num_threads()),
        HistogramMode::TacStartStop => tac_histogram(s1, s2, bins, config.hbt.tac_delay_ps),
    }
}

/// Per-arm ρᵢ = Sᵢ/Nᵢ combined as √(ρ₁ρ₂).
pub fn signal_fraction(rates: (f64, f64), background: (f64, f64)) -> Option<f64> {
    let rho1 = (rates.0 - background.0) / rates.0;
    let rho2 = (rates.1 - background.1) / rates.1;
    let rho = (rho1 * rho2).sqrt();
    (rho1 > 0.0 && rho2 > 0.0 && rho.is_finite()).then(|| rho.min(1.0))
}

/// Everything derived from one power point.
#[derive(Debug, Clone)]
pub struct PointAnalysis {
    pub report: PointReport,
    pub histogram: Option<CoincidenceHistogram>,
    pub raw: Option<G2Curve>,
    pub corrected: Option<G2Curve>,
    pub failures: Vec<(String, String)>,
}

/// Fits the dip model selected in the config. The three-level fit falls
/// back to the exponential dip when it fails.
pub fn fit_dip(
    config: &ExperimentConfig,
    curve: &G2Curve,
    failures: &mut Vec<(String, String)>,
) -> Option<(FitSummary, Quantity)> {
    let window = curve.window(config.histogram.fit_window_ns);
    if config.histogram.dip_model == DipModel::ThreeLevel {
        match fit_three_level(&window).and_then(|f| f.ensure_converged()) {
            Ok(fit) => {
                let summary = FitSummary::from_fit("three-level", &fit);
                let width = summary.get("lambda1_per_ns").cloned();
                if let Some(width) = width.filter(|w| w.uncertainty.is_some()) {
                    return Some((summary, width));
                }
                failures.push(("dip-fit".into(), "three-level fit gave no uncertainty for lambda1".into()));
            }
            Err(e) => failures.push(("dip-fit".into(), format!("three-level: {e}; using exponential dip"))),
        }
    }
    match fit_exponential_dip(&window).and_then(|f| f.ensure_converged()) {
        Ok(fit) => {
            let summary = FitSummary::from_fit("exponential", &fit);
            let width = summary.get("k_per_ns").cloned()?;
            Some((summary, width))
        }
        Err(e) => {
            failures.push(("dip-fit".into(), format!("exponential: {e}")));
            None
        }
    }
}

pub fn analyze_point(config: &ExperimentConfig, data: &PointData) -> PointAnalysis {
    let mut failures = Vec::new();
    let t = data.clicks.clicks1.duration_s();
    let (n1, n2) = data.clicks.rates_per_s();
    let (b1, b2) = data.background.rates_per_s();
    let rate = |n: usize| Quantity::with_uncertainty(n as f64 / t, (n as f64).sqrt() / t, "s^-1");
    let signal = (n1 - b1) + (n2 - b2);
    let signal_var = (data.clicks.clicks1.len() + data.clicks.clicks2.len()) as f64
        + (data.background.clicks1.len() + data.background.clicks2.len()) as f64;
    let rho = signal_fraction((n1, n2), (b1, b2));
    if rho.is_none() {
        failures.push(("background".into(), format!("no signal above background (N = {n1}, {n2}; B = {b1}, {b2})")));
    }

    let mut report = PointReport {
        index: data.index,
        power: Quantity::new(data.power_mw, "mW"),
        pump_rate: Quantity::new(data.scheme.pump_rate, "s^-1"),
        acquisition_time: Quantity::new(t, "s"),
        rate_1: rate(data.clicks.clicks1.len()),
        rate_2: rate(data.clicks.clicks2.len()),
        background_1: rate(data.background.clicks1.len()),
        background_2: rate(data.background.clicks2.len()),
        signal: Quantity::with_uncertainty(signal, signal_var.sqrt() / t, "s^-1"),
        signal_to_background: rho.filter(|&r| r < 1.0).map(|r| Quantity::new(r / (1.0 - r), "1")),
        rho: rho.map(|r| Quantity::new(r, "1")),
        coincidences: 0,
        cn_zero: None,
        g2c_zero: None,
        dip_width: None,
        dip_fit: None,
    };

    let histogram = match histogram(config, &data.clicks.clicks1, &data.clicks.clicks2) {
        Ok(h) => h,
        Err(e) => {
            failures.push(("correlate".into(), e.to_string()));
            return PointAnalysis { report, histogram: None, raw: None, corrected: None, failures };
        }
    };
    report.coincidences = histogram.total();
    let raw = match normalize(&histogram) {
        Ok(c) => c,
        Err(e) => {
            failures.push(("normalize".into(), e.to_string()));
            return PointAnalysis { report, histogram: Some(histogram), raw: None, corrected: None, failures };
        }
    };
    report.cn_zero = raw.at_zero().map(|(v, s)| Quantity::with_uncertainty(v, s, "1"));

    let corrected = rho.and_then(|r| match background_correct(&raw, r) {
        Ok(c) => Some(c),
        Err(e) => {
            failures.push(("background-correct".into(), e.to_string()));
            None
        }
    });
    if let Some(c) = &corrected {
        report.g2c_zero = c.at_zero().map(|(v, s)| Quantity::with_uncertainty(v, s, "1"));
        if let Some((summary, width)) = fit_dip(config, c, &mut failures) {
            report.dip_width = Some(width);
            report.dip_fit = Some(summary);
        }
    }
    PointAnalysis { report, histogram: Some(histogram), raw: Some(raw), corrected, failures }
}

pub fn multiphoton_row(label: &str, cn_zero: f64) -> Result<MultiphotonRow> {
    let source = multiphoton_probability(cn_zero, 1.0)?;
    let coherent = multiphoton_probability(1.0, 1.0)?;
    Ok(MultiphotonRow {
        label: label.to_string(),
        cn_zero: Quantity::new(cn_zero, "1"),
        p2_over_p1_squared: Quantity::new(source, "1"),
        coherent_p2_over_p1_squared: Quantity::new(coherent, "1"),
        improvement: Quantity::new(coherent_improvement(cn_zero)?, "1"),
    })
}

pub fn emitter_count(g2_zero: &Quantity, source: &str) -> Result<EmitterCountReport> {
    let count = estimate_emitter_count(g2_zero.value.max(0.0))?;
    Ok(EmitterCountReport {
        g2_zero: g2_zero.clone(),
        estimate: Quantity::new(count.estimate, "1"),
        rounded: count.rounded,
        ambiguous: count.ambiguous,
        source: source.to_string(),
    })
}

/// Result of a full run: the report plus the per-point curves for export.
pub struct SweepOutput {
    pub report: Report,
    pub points: Vec<PointAnalysis>,
}

/// Simulates and analyses every configured power, then fits saturation and
/// extrapolates the lifetime. Stage failures are recorded, not raised.
pub fn run_sweep(config: &ExperimentConfig) -> SweepOutput {
    let mut report = Report::new("sweep", Some(config.seed), Some(config.clone()));
    let analyses: Vec<std::result::Result<PointAnalysis, String>> = (0..config.acquisition.powers_mw.len())
        .into_par_iter()
        .map(|i| {
            simulate_point(config, i)
                .map(|data| analyze_point(config, &data))
                .map_err(|e| e.to_string())
        })
        .collect();

    let mut points = Vec::new();
    for (i, a) in analyses.into_iter().enumerate() {
        let power = config.acquisition.powers_mw[i];
        match a {
            Ok(a) => {
                for (stage, msg) in &a.failures {
                    report.fail(stage, Some(power), msg);
                }
                report.points.push(a.report.clone());
                points.push(a);
            }
            Err(msg) => report.fail("simulate", Some(power), msg),
        }
    }

    let saturation_points: Vec<(f64, f64)> =
        report.points.iter().map(|p| (p.power.value, p.signal.value)).collect();
    if saturation_points.len() >= 4 {
        let fit_beta = config.emitter.pump_shelving_coefficient > 0.0;
        match fit_saturation(&saturation_points, &config.scheme_at(0.0), fit_beta) {
            Ok(fit) => report.saturation = Some(FitSummary::from_fit("three-level steady state", &fit)),
            Err(e) => report.fail("saturation-fit", None, e),
        }
    }

    let sweep: Vec<PowerSweepPoint> = report
        .points
        .iter()
        .filter_map(|p| {
            let w = p.dip_width.as_ref()?;
            Some(PowerSweepPoint {
                power_mw: p.power.value,
                dip_width_per_ns: w.value,
                width_uncertainty_per_ns: w.uncertainty?,
            })
        })
        .collect();
    if sweep.len() >= 3 {
        match extrapolate_lifetime(&sweep) {
            Ok(fit) => report.lifetime = Some(FitSummary::from_fit("linear in power", &fit)),
            Err(e) => report.fail("lifetime-extrapolation", None, e),
        }
    }

    // Emitter count from the best-determined corrected zero-delay value.
    let best = report
        .points
        .iter()
        .filter_map(|p| Some((p, p.g2c_zero.as_ref()?)))
        .min_by(|a, b| a.1.uncertainty.unwrap_or(f64::INFINITY).total_cmp(&b.1.uncertainty.unwrap_or(f64::INFINITY)));
    if let Some((p, g)) = best {
        match emitter_count(g, &format!("g_c2(0) at {} mW", p.power.value)) {
            Ok(e) => report.emitter_count = Some(e),
            Err(e) => report.fail("emitter-count", Some(p.power.value), e),
        }
    }

    for p in &report.points.clone() {
        if let Some(cn) = &p.cn_zero {
            match multiphoton_row(&format!("{} mW", p.power.value), cn.value) {
                Ok(row) => report.multiphoton.push(row),
                Err(e) => report.fail("multiphoton", Some(p.power.value), e),
            }
        }
    }
    SweepOutput { report, points }
}
