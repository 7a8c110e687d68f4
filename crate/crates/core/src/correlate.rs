//! Coincidence histograms and normalized correlation curves.
//!
//! Two estimators are provided. [`tac_histogram`] emulates a start–stop
//! time-to-amplitude converter, including its dead time during conversion
//! and the cable delay on the stop input. [`pair_histogram`] counts every
//! cross pair inside the delay window with a single sliding-window merge
//! pass, and is exact.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check, invalid, Error, Result};
use crate::stream::{PhotonStream, PS_PER_NS, PS_PER_S};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistogramMode {
    #[serde(rename = "tac")]
    TacStartStop,
    AllPairs,
}

impl std::str::FromStr for HistogramMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tac" | "tac-start-stop" => Ok(Self::TacStartStop),
            "all-pairs" | "pairs" => Ok(Self::AllPairs),
            other => Err(invalid("mode", format!("unknown histogram mode `{other}`"))),
        }
    }
}

/// Delay bins `[min + i·w, min + (i+1)·w)` in picoseconds, where delay
/// means `t_stop − t_start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinSpec {
    pub bin_width_ps: u64,
    pub min_ps: i64,
    pub bins: usize,
}

impl BinSpec {
    /// Covers `[min_ps, max_ps)`, rounding the upper edge up to a whole bin.
    pub fn new(bin_width_ps: u64, min_ps: i64, max_ps: i64) -> Result<Self> {
        if bin_width_ps == 0 {
            return Err(invalid("bin_width", "must be > 0"));
        }
        if max_ps <= min_ps {
            return Err(invalid("range", format!("empty delay range [{min_ps}, {max_ps}) ps")));
        }
        let span = (max_ps - min_ps) as u64;
        Ok(Self {
            bin_width_ps,
            min_ps,
            bins: span.div_ceil(bin_width_ps) as usize,
        })
    }

    /// Symmetric range of at least `±half_range_ps` with a bin centred on zero delay.
    pub fn centered(bin_width_ps: u64, half_range_ps: u64) -> Result<Self> {
        if bin_width_ps == 0 {
            return Err(invalid("bin_width", "must be > 0"));
        }
        let side = half_range_ps.div_ceil(bin_width_ps).max(1);
        let bins = (2 * side + 1) as usize;
        let min_ps = -((side * bin_width_ps) as i64) - (bin_width_ps / 2) as i64;
        Ok(Self {
            bin_width_ps,
            min_ps,
            bins,
        })
    }

    pub fn max_ps(&self) -> i64 {
        self.min_ps + (self.bins as u64 * self.bin_width_ps) as i64
    }

    pub fn bin_width_s(&self) -> f64 {
        self.bin_width_ps as f64 / PS_PER_S
    }

    /// Bin centres in ns.
    pub fn centers_ns(&self) -> Vec<f64> {
        (0..self.bins)
            .map(|i| {
                (self.min_ps as f64 + (i as f64 + 0.5) * self.bin_width_ps as f64) / PS_PER_NS
            })
            .collect()
    }

    #[inline]
    fn index(&self, delay_ps: i64) -> Option<usize> {
        if delay_ps < self.min_ps {
            return None;
        }
        let i = ((delay_ps - self.min_ps) as u64 / self.bin_width_ps) as usize;
        (i < self.bins).then_some(i)
    }
}

/// Raw coincidence counts c(τ) plus the bookkeeping needed to normalize them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bins: BinSpec,
    pub counts: Vec<u64>,
    pub acquisition_time_s: f64,
    pub rate_1_per_s: f64,
    pub rate_2_per_s: f64,
    pub mode: HistogramMode,
}

impl CoincidenceHistogram {
    pub fn delays_ns(&self) -> Vec<f64> {
        self.bins.centers_ns()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Expected counts per bin for two uncorrelated Poisson streams.
    pub fn poisson_level(&self) -> f64 {
        self.rate_1_per_s * self.rate_2_per_s * self.bins.bin_width_s() * self.acquisition_time_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum G2Kind {
    /// C_N(τ) = c(τ)/(N₁·N₂·w·T).
    RawNormalized,
    /// g_c²(τ) after removing Poissonian background.
    BackgroundCorrected,
    /// Model values, no statistical error.
    Analytic,
}

/// Correlation values on a delay grid (ns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Curve {
    pub delays_ns: Vec<f64>,
    pub values: Vec<f64>,
    pub sigma: Vec<f64>,
    pub kind: G2Kind,
}

impl G2Curve {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// (value, sigma) at the grid point closest to zero delay.
    pub fn at_zero(&self) -> Option<(f64, f64)> {
        let i = self
            .delays_ns
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))?
            .0;
        Some((self.values[i], self.sigma[i]))
    }

    /// Points with |τ| ≤ `max_abs_delay_ns`.
    pub fn window(&self, max_abs_delay_ns: f64) -> G2Curve {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.delays_ns[i].abs() <= max_abs_delay_ns)
            .collect();
        G2Curve {
            delays_ns: keep.iter().map(|&i| self.delays_ns[i]).collect(),
            values: keep.iter().map(|&i| self.values[i]).collect(),
            sigma: keep.iter().map(|&i| self.sigma[i]).collect(),
            kind: self.kind,
        }
    }
}

fn acquisition(s1: &PhotonStream, s2: &PhotonStream) -> Result<(f64, f64, f64)> {
    if s1.duration() != s2.duration() {
        return Err(Error::InvalidStream(format!(
            "streams cover different durations ({} ps vs {} ps)",
            s1.duration(),
            s2.duration()
        )));
    }
    Ok((s1.duration_s(), s1.rate_per_s(), s2.rate_per_s()))
}

/// Start–stop TAC emulation.
///
/// Each accepted start converts until the first stop at or after it (stops
/// delayed by `tac_delay_ps`), or until full scale `max + tac_delay`
/// elapses. Starts arriving during a conversion are lost. Entries are
/// recorded at `Δt − tac_delay`.
pub fn tac_histogram(
    starts: &PhotonStream,
    stops: &PhotonStream,
    bins: BinSpec,
    tac_delay_ps: u64,
) -> Result<CoincidenceHistogram> {
    let (t_acq, n1, n2) = acquisition(starts, stops)?;
    let mut counts = vec![0u64; bins.bins];
    let delay = tac_delay_ps as i64;
    let full_scale = bins.max_ps() + delay;
    let stops = stops.timestamps();
    let mut j = 0usize;
    let mut busy_until = i64::MIN;

    if full_scale > 0 {
        for &start in starts.timestamps() {
            let t = start as i64;
            if t < busy_until {
                continue;
            }
            while j < stops.len() && (stops[j] as i64) + delay < t {
                j += 1;
            }
            match stops.get(j) {
                Some(&stop) if (stop as i64) + delay - t < full_scale => {
                    let dt = stop as i64 + delay - t;
                    if let Some(i) = bins.index(dt - delay) {
                        counts[i] += 1;
                    }
                    busy_until = t + dt;
                }
                _ => busy_until = t + full_scale,
            }
        }
    }

    Ok(CoincidenceHistogram {
        bins,
        counts,
        acquisition_time_s: t_acq,
        rate_1_per_s: n1,
        rate_2_per_s: n2,
        mode: HistogramMode::TacStartStop,
    })
}

/// Sliding-window pair counting for the starts `s1[range]`.
fn accumulate_pairs(
    s1: &[u64],
    s2: &[u64],
    bins: &BinSpec,
    counts: &mut [u64],
    skip_self_offset: Option<usize>,
) {
    let lo_delay = bins.min_ps;
    let hi_delay = bins.max_ps();
    let Some(&first) = s1.first() else { return };
    let mut lo = s2.partition_point(|&t| (t as i64) < first as i64 + lo_delay);
    for (i, &t1) in s1.iter().enumerate() {
        let t1 = t1 as i64;
        while lo < s2.len() && (s2[lo] as i64) < t1 + lo_delay {
            lo += 1;
        }
        let mut j = lo;
        while j < s2.len() {
            let d = s2[j] as i64 - t1;
            if d >= hi_delay {
                break;
            }
            if skip_self_offset != Some(j.wrapping_sub(i)) {
                let b = ((d - lo_delay) as u64 / bins.bin_width_ps) as usize;
                counts[b] += 1;
            }
            j += 1;
        }
    }
}

fn pair_histogram_impl(
    s1: &PhotonStream,
    s2: &PhotonStream,
    bins: BinSpec,
    chunks: usize,
    auto: bool,
) -> Result<CoincidenceHistogram> {
    let (t_acq, n1, n2) = acquisition(s1, s2)?;
    let a = s1.timestamps();
    let b = s2.timestamps();
    let chunk_len = a.len().div_ceil(chunks.max(1)).max(1);
    let counts = a
        .par_chunks(chunk_len)
        .enumerate()
        .map(|(c, part)| {
            let mut local = vec![0u64; bins.bins];
            // self pairs sit at j == c·chunk_len + i within the shared slice
            let skip = auto.then_some(c * chunk_len);
            accumulate_pairs(part, b, &bins, &mut local, skip);
            local
        })
        .reduce(
            || vec![0u64; bins.bins],
            |mut acc, part| {
                acc.iter_mut().zip(part).for_each(|(x, y)| *x += y);
                acc
            },
        );
    Ok(CoincidenceHistogram {
        bins,
        counts,
        acquisition_time_s: t_acq,
        rate_1_per_s: n1,
        rate_2_per_s: n2,
        mode: HistogramMode::AllPairs,
    })
}

/// Exact cross-correlation: every pair (t₁ ∈ s1, t₂ ∈ s2) with
/// `t₂ − t₁` inside the bin range.
pub fn pair_histogram(s1: &PhotonStream, s2: &PhotonStream, bins: BinSpec) -> Result<CoincidenceHistogram> {
    pair_histogram_impl(s1, s2, bins, 1, false)
}

/// [`pair_histogram`] split over `chunks` blocks of start events; the
/// result is identical to the sequential one.
pub fn pair_histogram_parallel(
    s1: &PhotonStream,
    s2: &PhotonStream,
    bins: BinSpec,
    chunks: usize,
) -> Result<CoincidenceHistogram> {
    pair_histogram_impl(s1, s2, bins, chunks, false)
}

/// Autocorrelation of one stream, without each event's pairing with itself.
pub fn auto_histogram(s: &PhotonStream, bins: BinSpec) -> Result<CoincidenceHistogram> {
    pair_histogram_impl(s, s, bins, 1, true)
}

/// C_N(τ) = c(τ)/(N₁·N₂·w·T) with Poisson errors. Empty bins get the
/// error of a single count.
pub fn normalize(h: &CoincidenceHistogram) -> Result<G2Curve> {
    if !(h.acquisition_time_s > 0.0) {
        return Err(Error::Normalization("acquisition time is zero".into()));
    }
    if !(h.rate_1_per_s > 0.0 && h.rate_2_per_s > 0.0) {
        return Err(Error::Normalization(format!(
            "count rates must be positive (N1 = {}, N2 = {})",
            h.rate_1_per_s, h.rate_2_per_s
        )));
    }
    let norm = h.poisson_level();
    Ok(G2Curve {
        delays_ns: h.delays_ns(),
        values: h.counts.iter().map(|&c| c as f64 / norm).collect(),
        sigma: h
            .counts
            .iter()
            .map(|&c| (c.max(1) as f64).sqrt() / norm)
            .collect(),
        kind: G2Kind::RawNormalized,
    })
}

/// g_c² = [C_N − (1 − ρ²)]/ρ², with ρ = S/(S+B).
pub fn background_correct(curve: &G2Curve, rho: f64) -> Result<G2Curve> {
    if curve.kind != G2Kind::RawNormalized {
        return Err(invalid("curve", "background correction needs a raw normalized curve"));
    }
    check("rho", rho, rho > 0.0 && rho <= 1.0, "must be in (0, 1]")?;
    let rho2 = rho * rho;
    Ok(G2Curve {
        delays_ns: curve.delays_ns.clone(),
        values: curve.values.iter().map(|v| (v - (1.0 - rho2)) / rho2).collect(),
        sigma: curve.sigma.iter().map(|s| s / rho2).collect(),
        kind: G2Kind::BackgroundCorrected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(ts: &[u64], d: u64) -> PhotonStream {
        PhotonStream::new(ts.to_vec(), d, "t").unwrap()
    }

    #[test]
    fn tac_single_pair() {
        let bins = BinSpec::new(1000, 0, 100_000).unwrap();
        let h = tac_histogram(&stream(&[0], 1_000_000), &stream(&[10_000], 1_000_000), bins, 0).unwrap();
        assert_eq!(h.counts[10], 1);
        assert_eq!(h.total(), 1);
    }

    #[test]
    fn tac_delay_gives_negative_times() {
        let bins = BinSpec::centered(1000, 20_000).unwrap();
        let d = 1_000_000;
        // stop precedes start by 7 ns
        let h = tac_histogram(&stream(&[100_000], d), &stream(&[93_000], d), bins, 50_000).unwrap();
        let delays = h.delays_ns();
        let i = h.counts.iter().position(|&c| c == 1).unwrap();
        assert_eq!(delays[i], -7.0);
        // simultaneous clicks land on zero delay
        let h = tac_histogram(&stream(&[100_000], d), &stream(&[100_000], d), bins, 50_000).unwrap();
        let i = h.counts.iter().position(|&c| c == 1).unwrap();
        assert_eq!(delays[i], 0.0);
        // without the cable delay negative times are invisible
        let h = tac_histogram(&stream(&[100_000], d), &stream(&[93_000], d), bins, 0).unwrap();
        assert_eq!(h.total(), 0);
    }

    #[test]
    fn tac_drops_starts_during_conversion() {
        let bins = BinSpec::new(1000, 0, 100_000).unwrap();
        let d = 1_000_000;
        let h = tac_histogram(&stream(&[0, 5_000], d), &stream(&[20_000], d), bins, 0).unwrap();
        assert_eq!(h.total(), 1);
        assert_eq!(h.counts[20], 1);
    }

    #[test]
    fn empty_streams_give_zero_histogram() {
        let bins = BinSpec::centered(1000, 10_000).unwrap();
        let e = PhotonStream::empty(1000, "e");
        assert_eq!(tac_histogram(&e, &e, bins, 0).unwrap().total(), 0);
        assert_eq!(pair_histogram(&e, &e, bins).unwrap().total(), 0);
    }

    #[test]
    fn pair_example() {
        let bins = BinSpec::new(1000, -10_000, 10_000).unwrap();
        let h = pair_histogram(&stream(&[0], 100_000), &stream(&[3_000, 7_000], 100_000), bins).unwrap();
        assert_eq!(h.counts[13], 1);
        assert_eq!(h.counts[17], 1);
        assert_eq!(h.total(), 2);
    }

    #[test]
    fn autocorrelation_excludes_self_pairs() {
        let bins = BinSpec::centered(1000, 10_000).unwrap();
        let s = stream(&[0, 2_000, 2_000], 100_000);
        let h = auto_histogram(&s, bins).unwrap();
        // pairs: (0,2)x2, (2,0)x2, the two equal stamps pair with each other
        assert_eq!(h.total(), 6);
        let zero = bins.bins / 2;
        assert_eq!(h.counts[zero], 2);
        assert_eq!(pair_histogram(&s, &s, bins).unwrap().total(), 9);
    }

    #[test]
    fn mismatched_durations_rejected() {
        let bins = BinSpec::centered(1000, 10_000).unwrap();
        assert!(pair_histogram(&stream(&[0], 10), &stream(&[0], 11), bins).is_err());
    }

    #[test]
    fn normalization_and_empty_bin_sigma() {
        let bins = BinSpec::new(1000, 0, 3000).unwrap();
        let h = CoincidenceHistogram {
            bins,
            counts: vec![0, 4, 16],
            acquisition_time_s: 2.0,
            rate_1_per_s: 1e4,
            rate_2_per_s: 2e4,
            mode: HistogramMode::AllPairs,
        };
        let norm = 1e4 * 2e4 * 1e-9 * 2.0;
        let g = normalize(&h).unwrap();
        assert_eq!(g.values, vec![0.0, 4.0 / norm, 16.0 / norm]);
        assert_eq!(g.sigma, vec![1.0 / norm, 2.0 / norm, 4.0 / norm]);
        let zero_rate = CoincidenceHistogram {
            rate_2_per_s: 0.0,
            ..h
        };
        assert!(matches!(normalize(&zero_rate), Err(Error::Normalization(_))));
    }

    #[test]
    fn background_correction() {
        let raw = G2Curve {
            delays_ns: vec![0.0, 1.0],
            values: vec![0.17, 1.0],
            sigma: vec![0.01, 0.01],
            kind: G2Kind::RawNormalized,
        };
        let same = background_correct(&raw, 1.0).unwrap();
        assert_eq!(same.values, raw.values);
        let rho = 20.0 / 21.0;
        let c = background_correct(&raw, rho).unwrap();
        // (0.17 - 41/441) / (400/441) = 0.0847...
        assert!((c.values[0] - (0.17 * 441.0 - 41.0) / 400.0).abs() < 1e-14);
        assert!((c.values[0] - 0.085).abs() < 1e-3);
        assert!((c.values[1] - 1.0).abs() < 1e-14);
        assert!(background_correct(&raw, 0.0).is_err());
        assert!(background_correct(&c, 0.5).is_err());
    }

    #[test]
    fn centered_bins() {
        let b = BinSpec::centered(300, 1000).unwrap();
        let c = b.centers_ns();
        assert_eq!(c.len(), 9);
        assert!(c[4].abs() < 1e-12);
        assert!((c[5] - 0.3).abs() < 1e-12);
    }
}
