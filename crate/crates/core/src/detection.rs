//! Hanbury Brown–Twiss detection chain: background light, a beamsplitter
//! and two avalanche photodiodes with finite efficiency, dark counts,
//! timing jitter and non-paralyzable dead time.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check, Result};
use crate::rng::{derive_seed, substream};
use crate::stream::{merge_sorted, PhotonStream, PS_PER_S};

/// One single-photon detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Detection probability per incident photon.
    pub efficiency: f64,
    pub dead_time_ps: u64,
    pub dark_rate_per_s: f64,
    /// Gaussian timing jitter, 0 disables.
    #[serde(default)]
    pub jitter_sigma_ps: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            efficiency: 1.0,
            dead_time_ps: 50_000,
            dark_rate_per_s: 300.0,
            jitter_sigma_ps: 0.0,
        }
    }
}

impl DetectorConfig {
    /// Perfect detector: unit efficiency, no dead time, no dark counts.
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dead_time_ps: 0,
            dark_rate_per_s: 0.0,
            jitter_sigma_ps: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check(
            "efficiency",
            self.efficiency,
            (0.0..=1.0).contains(&self.efficiency),
            "must be in [0, 1]",
        )?;
        check(
            "dark_rate_per_s",
            self.dark_rate_per_s,
            self.dark_rate_per_s >= 0.0,
            "must be >= 0",
        )?;
        check(
            "jitter_sigma_ps",
            self.jitter_sigma_ps,
            self.jitter_sigma_ps >= 0.0,
            "must be >= 0",
        )
    }
}

/// Beamsplitter and shared optical path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HbtConfig {
    /// Probability that a photon is routed to detector 1.
    pub split_ratio: f64,
    /// Poissonian background light entering before the beamsplitter.
    pub background_rate_per_s: f64,
    /// Cable delay on the stop input of the TAC.
    pub tac_delay_ps: u64,
}

impl Default for HbtConfig {
    fn default() -> Self {
        Self {
            split_ratio: 0.5,
            background_rate_per_s: 0.0,
            tac_delay_ps: 50_000,
        }
    }
}

impl HbtConfig {
    pub fn validate(&self) -> Result<()> {
        check(
            "split_ratio",
            self.split_ratio,
            self.split_ratio > 0.0 && self.split_ratio < 1.0,
            "must be in (0, 1)",
        )?;
        check(
            "background_rate_per_s",
            self.background_rate_per_s,
            self.background_rate_per_s >= 0.0,
            "must be >= 0",
        )
    }
}

/// Keeps each event independently with probability `keep_probability`.
pub fn thin(stream: &PhotonStream, keep_probability: f64, seed: u64) -> Result<PhotonStream> {
    check(
        "keep_probability",
        keep_probability,
        (0.0..=1.0).contains(&keep_probability),
        "must be in [0, 1]",
    )?;
    if keep_probability == 1.0 {
        return Ok(stream.clone());
    }
    let mut rng = substream(seed, 0);
    let kept = stream
        .timestamps()
        .iter()
        .copied()
        .filter(|_| rng.random_bool(keep_probability))
        .collect();
    Ok(PhotonStream::from_sorted(kept, stream.duration(), stream.label()))
}

/// Homogeneous Poisson process over `[0, duration)`, rate in s⁻¹.
pub fn poisson_events(rate_per_s: f64, duration_ps: u64, seed: u64) -> Result<Vec<u64>> {
    check("rate", rate_per_s, rate_per_s >= 0.0, "must be >= 0")?;
    let mut events = Vec::new();
    if rate_per_s == 0.0 {
        return Ok(events);
    }
    let mut rng = substream(seed, 1);
    let per_ps = rate_per_s / PS_PER_S;
    events.reserve((per_ps * duration_ps as f64 * 1.01) as usize + 16);
    let end = duration_ps as f64;
    let mut t = 0.0f64;
    loop {
        let gap: f64 = Exp1.sample(&mut rng);
        t += gap / per_ps;
        if t >= end {
            break;
        }
        let tick = t as u64;
        events.push(tick);
    }
    Ok(events)
}

/// Merges a Poisson process of rate `rate_per_s` into the stream.
pub fn add_poisson_events(stream: &PhotonStream, rate_per_s: f64, seed: u64) -> Result<PhotonStream> {
    let extra = poisson_events(rate_per_s, stream.duration(), seed)?;
    if extra.is_empty() {
        return Ok(stream.clone());
    }
    Ok(PhotonStream::from_sorted(
        merge_sorted(stream.timestamps(), &extra),
        stream.duration(),
        stream.label(),
    ))
}

/// Routes each event to output 1 with probability `split_ratio`, else output 2.
pub fn beamsplit(
    stream: &PhotonStream,
    split_ratio: f64,
    seed: u64,
) -> Result<(PhotonStream, PhotonStream)> {
    check(
        "split_ratio",
        split_ratio,
        split_ratio > 0.0 && split_ratio < 1.0,
        "must be in (0, 1)",
    )?;
    let mut rng = substream(seed, 2);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for &t in stream.timestamps() {
        if rng.random_bool(split_ratio) {
            a.push(t);
        } else {
            b.push(t);
        }
    }
    let d = stream.duration();
    Ok((
        PhotonStream::from_sorted(a, d, format!("{}_1", stream.label())),
        PhotonStream::from_sorted(b, d, format!("{}_2", stream.label())),
    ))
}

/// Non-paralyzable dead time: an event is recorded only if at least
/// `dead_time_ps` elapsed since the previous recorded event.
pub fn dead_time_filter(stream: &PhotonStream, dead_time_ps: u64) -> PhotonStream {
    if dead_time_ps == 0 {
        return stream.clone();
    }
    let mut out = Vec::with_capacity(stream.len());
    let mut ready_at = 0u64;
    for &t in stream.timestamps() {
        if out.is_empty() || t >= ready_at {
            out.push(t);
            ready_at = t.saturating_add(dead_time_ps);
        }
    }
    PhotonStream::from_sorted(out, stream.duration(), stream.label())
}

/// Detector model, applied in order: efficiency thinning, dark counts,
/// optional jitter (then re-sort), dead time.
pub fn apply_detector(stream: &PhotonStream, config: &DetectorConfig, seed: u64) -> Result<PhotonStream> {
    config.validate()?;
    let thinned = thin(stream, config.efficiency, derive_seed(seed, 0))?;
    let with_dark = add_poisson_events(&thinned, config.dark_rate_per_s, derive_seed(seed, 1))?;
    let jittered = if config.jitter_sigma_ps > 0.0 {
        let normal = Normal::new(0.0, config.jitter_sigma_ps).expect("validated sigma");
        let mut rng = substream(derive_seed(seed, 2), 3);
        let last = with_dark.duration().saturating_sub(1) as f64;
        let mut ts: Vec<u64> = with_dark
            .timestamps()
            .iter()
            .map(|&t| (t as f64 + normal.sample(&mut rng)).round().clamp(0.0, last) as u64)
            .collect();
        ts.sort_unstable();
        PhotonStream::from_sorted(ts, with_dark.duration(), with_dark.label())
    } else {
        with_dark
    };
    Ok(dead_time_filter(&jittered, config.dead_time_ps))
}

/// Click streams of the two detectors.
#[derive(Debug, Clone, PartialEq)]
pub struct HbtOutput {
    pub clicks1: PhotonStream,
    pub clicks2: PhotonStream,
}

impl HbtOutput {
    /// (N₁, N₂) in s⁻¹.
    pub fn rates_per_s(&self) -> (f64, f64) {
        (self.clicks1.rate_per_s(), self.clicks2.rate_per_s())
    }
}

/// Full chain: background → beamsplitter → detector per arm.
pub fn run_hbt(
    emission: &PhotonStream,
    hbt: &HbtConfig,
    det1: &DetectorConfig,
    det2: &DetectorConfig,
    seed: u64,
) -> Result<HbtOutput> {
    hbt.validate()?;
    det1.validate()?;
    det2.validate()?;
    let light = add_poisson_events(emission, hbt.background_rate_per_s, derive_seed(seed, 10))?;
    let (arm1, arm2) = beamsplit(&light, hbt.split_ratio, derive_seed(seed, 11))?;
    let clicks1 = apply_detector(&arm1, det1, derive_seed(seed, 12))?.with_label("det1");
    let clicks2 = apply_detector(&arm2, det2, derive_seed(seed, 13))?.with_label("det2");
    Ok(HbtOutput { clicks1, clicks2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poisson_stream(rate: f64, duration_s: f64, seed: u64) -> PhotonStream {
        let d = (duration_s * PS_PER_S) as u64;
        PhotonStream::new(poisson_events(rate, d, seed).unwrap(), d, "p").unwrap()
    }

    #[test]
    fn thin_extremes() {
        let s = poisson_stream(1e5, 0.01, 1);
        assert_eq!(thin(&s, 1.0, 3).unwrap(), s);
        assert!(thin(&s, 0.0, 3).unwrap().is_empty());
        assert!(thin(&s, 1.5, 3).is_err());
    }

    #[test]
    fn thin_binomial_count() {
        let s = poisson_stream(1e6, 0.1, 2);
        let n = s.len() as f64;
        let kept = thin(&s, 0.3, 5).unwrap().len() as f64;
        assert!((kept - 0.3 * n).abs() < 4.0 * (n * 0.3 * 0.7).sqrt());
    }

    #[test]
    fn poisson_injection_counts() {
        let empty = PhotonStream::empty(PS_PER_S as u64, "e");
        let out = add_poisson_events(&empty, 5e4, 8).unwrap();
        assert!((out.len() as f64 - 5e4).abs() < 4.0 * 5e4f64.sqrt());
        assert_eq!(add_poisson_events(&out, 0.0, 1).unwrap(), out);
        let twice = add_poisson_events(&out, 5e4, 9).unwrap();
        assert!(twice.timestamps().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn beamsplit_partitions() {
        let s = poisson_stream(1e6, 0.05, 4);
        let (a, b) = beamsplit(&s, 0.5, 7).unwrap();
        let n = s.len() as f64;
        assert_eq!(a.len() + b.len(), s.len());
        assert_eq!(merge_sorted(a.timestamps(), b.timestamps()), s.timestamps());
        assert!((a.len() as f64 - n / 2.0).abs() < 4.0 * (n / 4.0).sqrt());
        assert!(beamsplit(&s, 1.0, 7).is_err());
    }

    #[test]
    fn ideal_detector_is_identity() {
        let s = poisson_stream(1e5, 0.01, 11);
        assert_eq!(apply_detector(&s, &DetectorConfig::ideal(), 3).unwrap(), s);
    }

    #[test]
    fn dead_time_gap_and_idempotence() {
        let s = poisson_stream(5e6, 0.01, 12);
        let cfg = DetectorConfig {
            jitter_sigma_ps: 300.0,
            ..DetectorConfig::default()
        };
        let out = apply_detector(&s, &cfg, 1).unwrap();
        assert!(out.timestamps().windows(2).all(|w| w[1] - w[0] >= cfg.dead_time_ps));
        assert_eq!(dead_time_filter(&out, cfg.dead_time_ps), out);
    }

    #[test]
    fn non_paralyzable_dead_time_rate() {
        let rate = 2e6;
        let dead = 50_000u64;
        let duration_s = 0.2;
        let s = poisson_stream(rate, duration_s, 13);
        let out = dead_time_filter(&s, dead);
        let expected = rate / (1.0 + rate * dead as f64 / PS_PER_S) * duration_s;
        // Dead-time-limited counting has variance below Poisson; Poisson bound is conservative.
        assert!((out.len() as f64 - expected).abs() < 3.0 * expected.sqrt());
    }

    #[test]
    fn hbt_with_ideal_parts_partitions_emission() {
        let s = poisson_stream(1e5, 0.01, 14);
        let hbt = HbtConfig::default();
        let ideal = DetectorConfig::ideal();
        let out = run_hbt(&s, &hbt, &ideal, &ideal, 5).unwrap();
        assert_eq!(
            merge_sorted(out.clicks1.timestamps(), out.clicks2.timestamps()),
            s.timestamps()
        );
        assert_eq!(out, run_hbt(&s, &hbt, &ideal, &ideal, 5).unwrap());
    }

    #[test]
    fn background_only_arms() {
        let empty = PhotonStream::empty(PS_PER_S as u64, "e");
        let hbt = HbtConfig {
            split_ratio: 0.4,
            background_rate_per_s: 1e5,
            ..HbtConfig::default()
        };
        let det = DetectorConfig {
            efficiency: 0.5,
            dead_time_ps: 0,
            dark_rate_per_s: 0.0,
            jitter_sigma_ps: 0.0,
        };
        let out = run_hbt(&empty, &hbt, &det, &det, 6).unwrap();
        let (n1, n2) = out.rates_per_s();
        assert!((n1 - 2e4).abs() < 4.0 * 2e4f64.sqrt());
        assert!((n2 - 3e4).abs() < 4.0 * 3e4f64.sqrt());
    }
}
