//! Structured reports. Every number carries a unit string.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use hbtsim_core::FitResult;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const SOFTWARE: &str = concat!("hbtsim ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
#[error("`{field}` is in {found}, expected {expected}")]
pub struct UnitMismatch {
    pub field: String,
    pub found: String,
    pub expected: String,
}

impl Quantity {
    pub fn new(value: f64, unit: &str) -> Self {
        Quantity { value, unit: unit.to_string(), uncertainty: None }
    }

    pub fn with_uncertainty(value: f64, uncertainty: f64, unit: &str) -> Self {
        Quantity { value, unit: unit.to_string(), uncertainty: Some(uncertainty) }
    }

    /// The value, provided the quantity is expressed in `unit`.
    pub fn expect(&self, field: &str, unit: &str) -> Result<f64, UnitMismatch> {
        if self.unit == unit {
            Ok(self.value)
        } else {
            Err(UnitMismatch { field: field.to_string(), found: self.unit.clone(), expected: unit.to_string() })
        }
    }

    fn text(&self) -> String {
        let unit = if self.unit == "1" { String::new() } else { format!(" {}", self.unit) };
        match self.uncertainty {
            Some(u) => format!("{} ± {}{unit}", sig(self.value), sig(u)),
            None => format!("{}{unit}", sig(self.value)),
        }
    }
}

fn sig(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if (1e-3..1e6).contains(&v.abs()) {
        let digits = (5 - v.abs().log10().floor() as i32).clamp(0, 9) as usize;
        format!("{v:.digits$}")
    } else {
        format!("{v:.5e}")
    }
}

/// Unit implied by a parameter name's suffix.
pub fn unit_for(name: &str) -> &'static str {
    const SUFFIXES: [(&str, &str); 8] = [
        ("_per_s_per_mw", "s^-1 mW^-1"),
        ("_per_ns_per_mw", "ns^-1 mW^-1"),
        ("_per_ns", "ns^-1"),
        ("_per_s", "s^-1"),
        ("_ns", "ns"),
        ("_mw", "mW"),
        ("_um", "um"),
        ("_counts", "counts"),
    ];
    match name {
        "signal" | "background" => "counts",
        _ => SUFFIXES
            .iter()
            .find(|(suffix, _)| name.ends_with(suffix))
            .map(|&(_, unit)| unit)
            .unwrap_or("1"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: String,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced_chi_square: Option<f64>,
    pub parameters: BTreeMap<String, Quantity>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FitSummary {
    pub fn from_fit(model: &str, fit: &FitResult) -> Self {
        let parameters = fit
            .parameters
            .iter()
            .chain(&fit.derived)
            .filter(|p| p.value.is_finite())
            .map(|p| {
                let mut q = Quantity::new(p.value, unit_for(&p.name));
                q.uncertainty = p.uncertainty.filter(|u| u.is_finite());
                (p.name.clone(), q)
            })
            .collect();
        FitSummary {
            model: model.to_string(),
            converged: fit.converged,
            iterations: fit.iterations,
            reduced_chi_square: Some(fit.reduced_chi_square).filter(|x| x.is_finite()),
            parameters,
            warnings: fit.warnings.clone(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Quantity> {
        self.parameters.get(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_mw: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub index: usize,
    pub power: Quantity,
    pub pump_rate: Quantity,
    pub acquisition_time: Quantity,
    pub rate_1: Quantity,
    pub rate_2: Quantity,
    pub background_1: Quantity,
    pub background_2: Quantity,
    pub signal: Quantity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_to_background: Option<Quantity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Quantity>,
    pub coincidences: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cn_zero: Option<Quantity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g2c_zero: Option<Quantity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dip_width: Option<Quantity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dip_fit: Option<FitSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterCountReport {
    pub g2_zero: Quantity,
    pub estimate: Quantity,
    pub rounded: u32,
    pub ambiguous: bool,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifetimeRow {
    pub label: String,
    pub lifetime: Quantity,
}

/// p₂/p₁² for a measured C_N(0) against an attenuated coherent pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiphotonRow {
    pub label: String,
    pub cn_zero: Quantity,
    pub p2_over_p1_squared: Quantity,
    pub coherent_p2_over_p1_squared: Quantity,
    pub improvement: Quantity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub software: String,
    pub command: String,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<PointReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation: Option<FitSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifetime: Option<FitSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lifetime_table: Vec<LifetimeRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emitter_count: Option<EmitterCountReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub multiphoton: Vec<MultiphotonRow>,
    pub failures: Vec<StageFailure>,
}

impl Report {
    pub fn new(command: &str, seed: Option<u64>, config: Option<ExperimentConfig>) -> Self {
        Report {
            software: SOFTWARE.to_string(),
            command: command.to_string(),
            seed,
            config,
            points: Vec::new(),
            saturation: None,
            lifetime: None,
            lifetime_table: Vec::new(),
            emitter_count: None,
            multiphoton: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn fail(&mut self, stage: &str, power_mw: Option<f64>, message: impl ToString) {
        self.failures.push(StageFailure { stage: stage.to_string(), power_mw, message: message.to_string() });
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.software, self.command);
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "seed: {seed}");
        }
        if let Some(c) = &self.config {
            let _ = writeln!(out, "config: {}", c.name);
        }

        if !self.points.is_empty() {
            let _ = writeln!(out, "\nper power:");
            for p in &self.points {
                let _ = writeln!(out, "  [{}] P = {}", p.index, p.power.text());
                let _ = writeln!(out, "      N1 = {}, N2 = {}", p.rate_1.text(), p.rate_2.text());
                let _ = writeln!(out, "      B1 = {}, B2 = {}", p.background_1.text(), p.background_2.text());
                let _ = writeln!(out, "      S = {}", p.signal.text());
                if let (Some(sb), Some(rho)) = (&p.signal_to_background, &p.rho) {
                    let _ = writeln!(out, "      S/B = {}, rho = {}", sb.text(), rho.text());
                }
                let _ = writeln!(out, "      coincidences = {}", p.coincidences);
                if let Some(q) = &p.cn_zero {
                    let _ = writeln!(out, "      C_N(0) = {}", q.text());
                }
                if let Some(q) = &p.g2c_zero {
                    let _ = writeln!(out, "      g_c2(0) = {}", q.text());
                }
                if let Some(q) = &p.dip_width {
                    let model = p.dip_fit.as_ref().map(|f| f.model.as_str()).unwrap_or("");
                    let _ = writeln!(out, "      dip width = {} ({model})", q.text());
                }
            }
        }
        for (title, fit) in [("saturation fit", &self.saturation), ("lifetime extrapolation", &self.lifetime)] {
            if let Some(fit) = fit {
                let _ = writeln!(out, "\n{title} ({}, converged: {}):", fit.model, fit.converged);
                for (name, q) in &fit.parameters {
                    let _ = writeln!(out, "  {name} = {}", q.text());
                }
                for w in &fit.warnings {
                    let _ = writeln!(out, "  warning: {w}");
                }
            }
        }
        if !self.lifetime_table.is_empty() {
            let _ = writeln!(out, "\nlifetimes:");
            for row in &self.lifetime_table {
                let _ = writeln!(out, "  {:<34} {}", row.label, row.lifetime.text());
            }
        }
        if let Some(e) = &self.emitter_count {
            let _ = writeln!(
                out,
                "\nemitter count: p = {} -> {}{} (g2(0) = {}, {})",
                e.estimate.text(),
                e.rounded,
                if e.ambiguous { " (ambiguous)" } else { "" },
                e.g2_zero.text(),
                e.source
            );
        }
        if !self.multiphoton.is_empty() {
            let _ = writeln!(out, "\nmultiphoton pulses (p2 / p1^2):");
            let _ = writeln!(out, "  {:<24} {:>10} {:>12} {:>10} {:>12}", "", "C_N(0)", "source", "coherent", "improvement");
            for row in &self.multiphoton {
                let _ = writeln!(
                    out,
                    "  {:<24} {:>10} {:>12} {:>10} {:>12}",
                    row.label,
                    sig(row.cn_zero.value),
                    sig(row.p2_over_p1_squared.value),
                    sig(row.coherent_p2_over_p1_squared.value),
                    sig(row.improvement.value)
                );
            }
        }
        if !self.failures.is_empty() {
            let _ = writeln!(out, "\nfailures:");
            for f in &self.failures {
                match f.power_mw {
                    Some(p) => {
                        let _ = writeln!(out, "  {} at {} mW: {}", f.stage, sig(p), f.message);
                    }
                    None => {
                        let _ = writeln!(out, "  {}: {}", f.stage, f.message);
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn units_from_names() {
        assert_eq!(unit_for("k_per_ns"), "ns^-1");
        assert_eq!(unit_for("lifetime_ns"), "ns");
        assert_eq!(unit_for("kappa_per_s_per_mw"), "s^-1 mW^-1");
        assert_eq!(unit_for("slope_per_ns_per_mw"), "ns^-1 mW^-1");
        assert_eq!(unit_for("plateau_rate_per_s"), "s^-1");
        assert_eq!(unit_for("power_at_max_mw"), "mW");
        assert_eq!(unit_for("fwhm_um"), "um");
        assert_eq!(unit_for("contrast"), "1");
        assert_eq!(unit_for("signal"), "counts");
    }

    #[test]
    fn unit_check() {
        let q = Quantity::new(25.0, "ns");
        assert_eq!(q.expect("tau", "ns").unwrap(), 25.0);
        assert!(q.expect("tau", "s").unwrap_err().to_string().contains("expected s"));
    }

    #[test]
    fn text_formatting() {
        assert_eq!(Quantity::with_uncertainty(22.7, 0.05, "ns").text(), "22.7000 ± 0.0500000 ns");
        assert_eq!(sig(1.0e-5), "1.00000e-5");
        assert_eq!(sig(0.0), "0");
    }
}
