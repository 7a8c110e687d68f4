//! Experiment configuration files.
//!
//! Configs are TOML. Every physical quantity carries its unit in the key name
//! (`radiative_rate_per_s`, `dead_time_ps`, ...). Unknown keys are rejected so
//! that a misspelled unit suffix is a load error rather than a silent default.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use hbtsim_core::detection::{DetectorConfig, HbtConfig};
use hbtsim_core::photophysics::{nanocrystal_lifetime, LevelScheme, MediumModel};
use hbtsim_core::{BinSpec, HistogramMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {reason}")]
    Field { field: String, reason: String },
    #[error("unknown preset `{0}` (expected one of: nanocrystal, bulk, shelving)")]
    UnknownPreset(String),
}

fn field_error(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: field.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Environment {
    Bulk,
    Nanocrystal,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DipModel {
    /// Full three-state g² with bunching shoulder; the dip width is λ₁.
    ThreeLevel,
    /// Single exponential dip with free contrast and baseline.
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterSection {
    pub environment: Environment,
    /// Omitted: taken from the medium model (bulk lifetime, or the
    /// index-corrected prediction for a nanocrystal).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radiative_rate_per_s: Option<f64>,
    #[serde(default)]
    pub shelve_rate_per_s: f64,
    #[serde(default)]
    pub deshelve_rate_per_s: f64,
    #[serde(default)]
    pub pump_shelving_coefficient: f64,
    pub pump_calibration_per_s_per_mw: f64,
    pub collection_efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumSection {
    pub bulk_index: f64,
    pub substrate_index: f64,
    pub local_field_factor: f64,
    pub bulk_lifetime_ns: f64,
}

impl Default for MediumSection {
    fn default() -> Self {
        let m = MediumModel::default();
        MediumSection {
            bulk_index: m.bulk_index,
            substrate_index: m.substrate_index,
            local_field_factor: m.local_field_factor,
            bulk_lifetime_ns: m.bulk_lifetime_ns,
        }
    }
}

impl MediumSection {
    pub fn model(&self) -> MediumModel {
        MediumModel {
            bulk_index: self.bulk_index,
            substrate_index: self.substrate_index,
            local_field_factor: self.local_field_factor,
            bulk_lifetime_ns: self.bulk_lifetime_ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSection {
    pub powers_mw: Vec<f64>,
    pub time_per_point_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HbtSection {
    pub split_ratio: f64,
    pub background_rate_per_s: f64,
    pub tac_delay_ps: u64,
}

impl Default for HbtSection {
    fn default() -> Self {
        let h = HbtConfig::default();
        HbtSection {
            split_ratio: h.split_ratio,
            background_rate_per_s: h.background_rate_per_s,
            tac_delay_ps: h.tac_delay_ps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub efficiency: f64,
    pub dead_time_ps: u64,
    pub dark_rate_per_s: f64,
    #[serde(default)]
    pub jitter_sigma_ps: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let d = DetectorConfig::default();
        DetectorSection {
            efficiency: d.efficiency,
            dead_time_ps: d.dead_time_ps,
            dark_rate_per_s: d.dark_rate_per_s,
            jitter_sigma_ps: d.jitter_sigma_ps,
        }
    }
}

impl DetectorSection {
    pub fn detector(&self) -> DetectorConfig {
        DetectorConfig {
            efficiency: self.efficiency,
            dead_time_ps: self.dead_time_ps,
            dark_rate_per_s: self.dark_rate_per_s,
            jitter_sigma_ps: self.jitter_sigma_ps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSection {
    pub bin_width_ps: u64,
    pub half_range_ps: u64,
    pub mode: HistogramMode,
    pub dip_model: DipModel,
    /// Delays beyond this are excluded from the dip fit.
    pub fit_window_ns: f64,
}

impl Default for HistogramSection {
    fn default() -> Self {
        HistogramSection {
            bin_width_ps: 1000,
            half_range_ps: 200_000,
            mode: HistogramMode::AllPairs,
            dip_model: DipModel::ThreeLevel,
            fit_window_ns: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub emitter: EmitterSection,
    #[serde(default)]
    pub medium: MediumSection,
    pub acquisition: AcquisitionSection,
    #[serde(default)]
    pub hbt: HbtSection,
    #[serde(default)]
    pub detector1: DetectorSection,
    #[serde(default)]
    pub detector2: DetectorSection,
    #[serde(default)]
    pub histogram: HistogramSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Nanocrystal,
    Bulk,
    Shelving,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Nanocrystal, Preset::Bulk, Preset::Shelving];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Nanocrystal => "nanocrystal",
            Preset::Bulk => "bulk",
            Preset::Shelving => "shelving",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Preset::Nanocrystal => include_str!("../presets/nanocrystal.toml"),
            Preset::Bulk => include_str!("../presets/bulk.toml"),
            Preset::Shelving => include_str!("../presets/shelving.toml"),
        }
    }

    pub fn config(self) -> ExperimentConfig {
        ExperimentConfig::from_toml(self.source()).expect("bundled preset parses")
    }
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ConfigError::UnknownPreset(s.to_string()))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse(msg) => ConfigError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn radiative_rate_per_s(&self) -> f64 {
        match self.emitter.radiative_rate_per_s {
            Some(rate) => rate,
            None => self.medium_lifetime_ns().map(|t| 1e9 / t).unwrap_or(f64::NAN),
        }
    }

    /// Lifetime the medium model predicts for this environment, if any.
    pub fn medium_lifetime_ns(&self) -> Option<f64> {
        match self.emitter.environment {
            Environment::Bulk => Some(self.medium.bulk_lifetime_ns),
            Environment::Nanocrystal => nanocrystal_lifetime(&self.medium.model()).ok(),
            Environment::Custom => None,
        }
    }

    /// Level scheme with the pump rate set for `power_mw`.
    pub fn scheme_at(&self, power_mw: f64) -> LevelScheme {
        LevelScheme {
            pump_rate: self.emitter.pump_calibration_per_s_per_mw * power_mw,
            radiative_rate: self.radiative_rate_per_s(),
            shelve_rate: self.emitter.shelve_rate_per_s,
            deshelve_rate: self.emitter.deshelve_rate_per_s,
            pump_shelving_coefficient: self.emitter.pump_shelving_coefficient,
        }
    }

    pub fn hbt(&self) -> HbtConfig {
        HbtConfig {
            split_ratio: self.hbt.split_ratio,
            background_rate_per_s: self.hbt.background_rate_per_s,
            tac_delay_ps: self.hbt.tac_delay_ps,
        }
    }

    pub fn bins(&self) -> BinSpec {
        BinSpec::centered(self.histogram.bin_width_ps, self.histogram.half_range_ps)
            .expect("validated histogram section")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.emitter;
        if e.environment == Environment::Custom && e.radiative_rate_per_s.is_none() {
            return Err(field_error("emitter.radiative_rate_per_s", "required when environment = \"custom\""));
        }
        self.medium
            .model()
            .validate()
            .map_err(|err| field_error("medium", err.to_string()))?;
        let rate = self.radiative_rate_per_s();
        if !(rate.is_finite() && rate > 0.0) {
            return Err(field_error("emitter.radiative_rate_per_s", "must be finite and > 0"));
        }
        positive_or_zero("emitter.shelve_rate_per_s", e.shelve_rate_per_s)?;
        positive_or_zero("emitter.deshelve_rate_per_s", e.deshelve_rate_per_s)?;
        positive_or_zero("emitter.pump_shelving_coefficient", e.pump_shelving_coefficient)?;
        positive_or_zero("emitter.pump_calibration_per_s_per_mw", e.pump_calibration_per_s_per_mw)?;
        if !(e.collection_efficiency > 0.0 && e.collection_efficiency <= 1.0) {
            return Err(field_error("emitter.collection_efficiency", "must be in (0, 1]"));
        }

        let a = &self.acquisition;
        if a.powers_mw.is_empty() {
            return Err(field_error("acquisition.powers_mw", "at least one power is required"));
        }
        for (i, &p) in a.powers_mw.iter().enumerate() {
            if !(p.is_finite() && p >= 0.0) {
                return Err(field_error(&format!("acquisition.powers_mw[{i}]"), "must be finite and >= 0"));
            }
        }
        if !(a.time_per_point_s.is_finite() && a.time_per_point_s > 0.0) {
            return Err(field_error("acquisition.time_per_point_s", "must be finite and > 0"));
        }
        if a.time_per_point_s * 1e12 >= u64::MAX as f64 {
            return Err(field_error("acquisition.time_per_point_s", "exceeds the picosecond timestamp range"));
        }

        self.hbt().validate().map_err(|err| field_error("hbt", err.to_string()))?;
        self.detector1
            .detector()
            .validate()
            .map_err(|err| field_error("detector1", err.to_string()))?;
        self.detector2
            .detector()
            .validate()
            .map_err(|err| field_error("detector2", err.to_string()))?;

        let h = &self.histogram;
        BinSpec::centered(h.bin_width_ps, h.half_range_ps).map_err(|err| field_error("histogram", err.to_string()))?;
        if !(h.fit_window_ns.is_finite() && h.fit_window_ns > 0.0) {
            return Err(field_error("histogram.fit_window_ns", "must be finite and > 0"));
        }
        Ok(())
    }
}

fn positive_or_zero(field: &str, value: f64) -> Result<(), ConfigError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(field_error(field, "must be finite and >= 0"))
    }
}
