//! Rate-equation model of a single color center.
//!
//! The emitter is an effective three-state Markov chain: ground `g`,
//! excited `e` and a metastable shelf `s`. Fast intraband relaxations of
//! the underlying four-level structure are folded into the effective rates.
//!
//! ```text
//!        r            Γ (photon)
//!   g ──────▶ e ──────────────▶ g
//!             │ k_es        k_sg
//!             └──────▶ s ──────▶ g
//! ```
//!
//! With pump-dependent shelving enabled the e→s rate is `k_es + β·r`.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlate::{G2Curve, G2Kind};
use crate::error::{check, invalid, Result};
use crate::rng::{substream, SimRng};
use crate::stream::{ns_to_ps, PhotonStream, PS_PER_S};

/// Rates of the three-state emitter, all in s⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelScheme {
    /// g → e.
    pub pump_rate: f64,
    /// e → g, one photon per jump.
    pub radiative_rate: f64,
    /// e → s.
    pub shelve_rate: f64,
    /// s → g.
    pub deshelve_rate: f64,
    /// β: extra e → s rate per unit pump rate (dimensionless).
    #[serde(default)]
    pub pump_shelving_coefficient: f64,
}

impl LevelScheme {
    pub fn two_level(pump_rate: f64, radiative_rate: f64) -> Self {
        Self {
            pump_rate,
            radiative_rate,
            shelve_rate: 0.0,
            deshelve_rate: 0.0,
            pump_shelving_coefficient: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check("pump_rate", self.pump_rate, self.pump_rate >= 0.0, "must be >= 0")?;
        check(
            "radiative_rate",
            self.radiative_rate,
            self.radiative_rate > 0.0,
            "must be > 0",
        )?;
        check("shelve_rate", self.shelve_rate, self.shelve_rate >= 0.0, "must be >= 0")?;
        check(
            "deshelve_rate",
            self.deshelve_rate,
            self.deshelve_rate >= 0.0,
            "must be >= 0",
        )?;
        check(
            "pump_shelving_coefficient",
            self.pump_shelving_coefficient,
            self.pump_shelving_coefficient >= 0.0,
            "must be >= 0",
        )
    }

    pub fn with_pump_rate(mut self, pump_rate: f64) -> Self {
        self.pump_rate = pump_rate;
        self
    }

    /// e → s rate including the pump-dependent term, s⁻¹.
    pub fn effective_shelve_rate(&self) -> f64 {
        self.shelve_rate + self.pump_shelving_coefficient * self.pump_rate
    }

    /// Radiative lifetime 1/Γ in ns.
    pub fn radiative_lifetime_ns(&self) -> f64 {
        1e9 / self.radiative_rate
    }
}

/// Level populations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occupations {
    pub ground: f64,
    pub excited: f64,
    pub shelf: f64,
}

impl Occupations {
    pub fn as_array(&self) -> [f64; 3] {
        [self.ground, self.excited, self.shelf]
    }
}

/// Stationary populations of the rate equations.
pub fn steady_state(scheme: &LevelScheme) -> Result<Occupations> {
    scheme.validate()?;
    let r = scheme.pump_rate;
    let gamma = scheme.radiative_rate;
    let k = scheme.effective_shelve_rate();
    let q = scheme.deshelve_rate;

    if r == 0.0 {
        return Ok(Occupations {
            ground: 1.0,
            excited: 0.0,
            shelf: 0.0,
        });
    }
    if k == 0.0 {
        let excited = r / (r + gamma);
        return Ok(Occupations {
            ground: 1.0 - excited,
            excited,
            shelf: 0.0,
        });
    }
    if q == 0.0 {
        // absorbing shelf
        return Ok(Occupations {
            ground: 0.0,
            excited: 0.0,
            shelf: 1.0,
        });
    }
    // Balance: r·p_g = (Γ + k)·p_e, k·p_e = q·p_s.
    let wg = (gamma + k) / r;
    let ws = k / q;
    let norm = wg + 1.0 + ws;
    let excited = 1.0 / norm;
    let shelf = ws / norm;
    Ok(Occupations {
        ground: 1.0 - excited - shelf,
        excited,
        shelf,
    })
}

/// Steady-state photon emission rate Γ·p_e in s⁻¹.
pub fn emission_rate(scheme: &LevelScheme) -> Result<f64> {
    Ok(scheme.radiative_rate * steady_state(scheme)?.excited)
}

/// Parameters of the two-exponential form
/// `g²(τ) = 1 − (1+a)·exp(−λ₁|τ|) + a·exp(−λ₂|τ|)`, rates in ns⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelParams {
    /// λ₁, the antibunching recovery rate.
    pub fast_rate_per_ns: f64,
    /// λ₂, the decay rate of the bunching shoulder.
    pub slow_rate_per_ns: f64,
    /// a, the bunching amplitude.
    pub bunching: f64,
}

impl ThreeLevelParams {
    pub fn g2(&self, tau_ns: f64) -> f64 {
        let t = tau_ns.abs();
        let a = self.bunching;
        -(1.0 + a) * (-self.fast_rate_per_ns * t).exp_m1() + a * (-self.slow_rate_per_ns * t).exp_m1()
    }
}

/// Relaxation of (p_e, p_s) after a photon detection, in ns⁻¹ units.
struct Relaxation {
    r: f64,
    gamma: f64,
    k: f64,
    q: f64,
    p_excited: f64,
    p_shelf: f64,
}

impl Relaxation {
    fn new(scheme: &LevelScheme) -> Result<Self> {
        let occ = steady_state(scheme)?;
        if occ.excited <= 0.0 {
            return Err(invalid(
                "scheme",
                "no steady-state emission (unpumped or permanently shelved), g² undefined",
            ));
        }
        Ok(Self {
            r: scheme.pump_rate * 1e-9,
            gamma: scheme.radiative_rate * 1e-9,
            k: scheme.effective_shelve_rate() * 1e-9,
            q: scheme.deshelve_rate * 1e-9,
            p_excited: occ.excited,
            p_shelf: occ.shelf,
        })
    }

    /// Trace/2, determinant and discriminant of
    /// A = [[−(r+Γ+k), −r], [k, −q]].
    fn spectrum(&self) -> (f64, f64, f64) {
        let a = self.r + self.gamma + self.k;
        let half_trace = -(a + self.q) / 2.0;
        let det = a * self.q + self.r * self.k;
        let disc = (a - self.q).powi(2) / 4.0 - self.r * self.k;
        (half_trace, det, disc)
    }

    fn exponential_form(&self) -> Option<ThreeLevelParams> {
        if self.k == 0.0 {
            return Some(ThreeLevelParams {
                fast_rate_per_ns: self.r + self.gamma,
                slow_rate_per_ns: self.q,
                bunching: 0.0,
            });
        }
        let (half_trace, det, disc) = self.spectrum();
        if disc <= 1e-8 * half_trace * half_trace {
            return None;
        }
        let fast = -half_trace + disc.sqrt();
        let slow = det / fast;
        // g²(0) = 0 and dg²/dτ(0) = r / p_e fix both amplitudes.
        let bunching = (self.r / self.p_excited - fast) / (fast - slow);
        Some(ThreeLevelParams {
            fast_rate_per_ns: fast,
            slow_rate_per_ns: slow,
            bunching,
        })
    }

    /// exp(A·t) applied to the deviation from steady state, via
    /// exp(At) = e^{mt}[C(t)·I + S(t)·(A − mI)].
    fn g2_matrix_exponential(&self, tau: f64) -> f64 {
        let (m, _, disc) = self.spectrum();
        let (c, s) = if disc > 0.0 {
            let w = disc.sqrt();
            ((w * tau).cosh(), (w * tau).sinh() / w)
        } else if disc < 0.0 {
            let w = (-disc).sqrt();
            ((w * tau).cos(), (w * tau).sin() / w)
        } else {
            (1.0, tau)
        };
        let a11 = -(self.r + self.gamma + self.k) - m;
        let a12 = -self.r;
        let (y_e, y_s) = (-self.p_excited, -self.p_shelf);
        let dev_e = (m * tau).exp() * (c * y_e + s * (a11 * y_e + a12 * y_s));
        1.0 + dev_e / self.p_excited
    }
}

/// Two-exponential parameters of the analytic g² for `scheme`.
///
/// Returns `None` when the relaxation eigenvalues are complex or nearly
/// degenerate, in which case the two-exponential form does not apply.
pub fn three_level_parameters(scheme: &LevelScheme) -> Result<Option<ThreeLevelParams>> {
    Ok(Relaxation::new(scheme)?.exponential_form())
}

/// Analytic g²(τ) for delays in ns, from the post-emission ground state.
pub fn analytic_g2(scheme: &LevelScheme, delays_ns: &[f64]) -> Result<G2Curve> {
    if let Some(bad) = delays_ns.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
        return Err(invalid("delays", format!("delays must be finite and >= 0, got {bad}")));
    }
    let relax = Relaxation::new(scheme)?;
    let values: Vec<f64> = match relax.exponential_form() {
        Some(p) => delays_ns.iter().map(|&t| p.g2(t)).collect(),
        None => delays_ns
            .iter()
            .map(|&t| if t == 0.0 { 0.0 } else { relax.g2_matrix_exponential(t) })
            .collect(),
    };
    Ok(G2Curve {
        delays_ns: delays_ns.to_vec(),
        sigma: vec![0.0; values.len()],
        values,
        kind: G2Kind::Analytic,
    })
}

/// Steady-state emission rate versus pump power for the linear mapping r = κ·P.
pub fn emission_rate_vs_power(
    template: &LevelScheme,
    kappa_per_s_per_mw: f64,
    powers_mw: &[f64],
) -> Result<Vec<(f64, f64)>> {
    check("kappa", kappa_per_s_per_mw, kappa_per_s_per_mw > 0.0, "must be > 0")?;
    powers_mw
        .iter()
        .map(|&p| {
            check("power", p, p >= 0.0, "must be >= 0")?;
            let rate = emission_rate(&template.with_pump_rate(kappa_per_s_per_mw * p))?;
            Ok((p, rate))
        })
        .collect()
}

/// Spontaneous emission rate in a medium of index `n` with local field
/// enhancement `l`: Γ_n = n·l²·Γ_v.
pub fn lifetime_in_medium(vacuum_rate: f64, index: f64, local_field: f64) -> Result<f64> {
    check("vacuum_rate", vacuum_rate, vacuum_rate > 0.0, "must be > 0")?;
    check("index", index, index >= 1.0, "must be >= 1")?;
    check("local_field", local_field, local_field > 0.0, "must be > 0")?;
    Ok(index * local_field * local_field * vacuum_rate)
}

/// Refractive environment of the emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediumModel {
    pub bulk_index: f64,
    pub substrate_index: f64,
    #[serde(default = "unit_local_field")]
    pub local_field_factor: f64,
    pub bulk_lifetime_ns: f64,
}

fn unit_local_field() -> f64 {
    1.0
}

impl Default for MediumModel {
    /// Diamond on fused silica, bulk NV lifetime 11.6 ns.
    fn default() -> Self {
        Self {
            bulk_index: 2.4,
            substrate_index: 1.45,
            local_field_factor: 1.0,
            bulk_lifetime_ns: 11.6,
        }
    }
}

impl MediumModel {
    pub fn validate(&self) -> Result<()> {
        check("bulk_index", self.bulk_index, self.bulk_index >= 1.0, "must be >= 1")?;
        check(
            "substrate_index",
            self.substrate_index,
            self.substrate_index >= 1.0,
            "must be >= 1",
        )?;
        check(
            "local_field_factor",
            self.local_field_factor,
            self.local_field_factor > 0.0,
            "must be > 0",
        )?;
        check(
            "bulk_lifetime_ns",
            self.bulk_lifetime_ns,
            self.bulk_lifetime_ns > 0.0,
            "must be > 0",
        )
    }
}

/// Lifetime (ns) of an emitter in a sub-wavelength crystal on a substrate:
/// it radiates into air over one half-space and into the substrate over the
/// other. The local field factor is shared with the bulk and cancels.
pub fn nanocrystal_lifetime(medium: &MediumModel) -> Result<f64> {
    medium.validate()?;
    let l = medium.local_field_factor;
    let bulk_rate = 1.0 / medium.bulk_lifetime_ns;
    let vacuum_rate = bulk_rate / (medium.bulk_index * l * l);
    let air = lifetime_in_medium(vacuum_rate, 1.0, l)?;
    let substrate = lifetime_in_medium(vacuum_rate, medium.substrate_index, l)?;
    Ok(1.0 / (0.5 * (air + substrate)))
}

/// Output of a stochastic run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Kept (collected) photon emission times.
    pub photons: PhotonStream,
    /// Time spent in (g, e, s), seconds. Exact when nothing is discarded;
    /// with a collection efficiency below one, the final partial cycle is
    /// split g-first.
    pub dwell_s: [f64; 3],
    /// All radiative jumps, kept or not.
    pub emissions: u64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Level {
    Ground,
    Excited,
    Shelf,
}

/// Exact event-driven sampler.
///
/// Every radiative jump returns the emitter to `g`, so the kept photons form
/// a renewal process and the path between two of them can be drawn in bulk.
/// A block is a run of g→e cycles ending in a kept photon (or a chunk of
/// [`MAX_BLOCK_CYCLES`] cycles without one). The cycle count is geometric,
/// the number of shelving excursions among the lost cycles is binomial, and
/// the summed dwell times in `g`, `e` and `s` are Gamma distributed. The
/// block that crosses the end of the run is split back into its individual
/// dwell times (uniform spacings of each Gamma sum) so that the per-state
/// dwell totals are clipped exactly.
fn run_trajectory(
    scheme: &LevelScheme,
    duration_ps: u64,
    keep: f64,
    rng: &mut SimRng,
    label: &str,
) -> Result<Trajectory> {
    scheme.validate()?;
    check("collection_efficiency", keep, (0.0..=1.0).contains(&keep), "must be in [0, 1]")?;
    if duration_ps == 0 {
        return Err(invalid("duration", "must be > 0"));
    }

    let to_per_ps = 1.0 / PS_PER_S;
    let r = scheme.pump_rate * to_per_ps;
    let gamma = scheme.radiative_rate * to_per_ps;
    let k = scheme.effective_shelve_rate() * to_per_ps;
    let q = scheme.deshelve_rate * to_per_ps;
    let out_e = gamma + k;
    let p_kept = gamma * keep / out_e;
    let p_shelve = k / out_e;
    // With no way out of `s`, shelving ends a block like a kept photon.
    let shelf_absorbs = q == 0.0 && k > 0.0;
    let p_block_end = if shelf_absorbs { p_kept + p_shelve } else { p_kept };
    // Failures before the block ends, by inversion: ⌊ln U / ln(1 − p)⌋.
    let ln_continue = (-p_block_end).ln_1p();
    let lost_emission = gamma * (1.0 - keep);
    let p_lost_shelved = if shelf_absorbs || k == 0.0 { 0.0 } else { k / (k + lost_emission) };
    let end = duration_ps as f64;
    let mut shelved_given_lost: Vec<Option<Binomial>> = Vec::new();

    let mut photons = Vec::new();
    let mut dwell = [0.0f64; 3];
    let mut emissions = 0u64;
    let mut t = 0.0f64;

    let occ = steady_state(scheme)?;
    let u: f64 = rng.random();
    let mut level = if u < occ.ground {
        Level::Ground
    } else if u < occ.ground + occ.excited {
        Level::Excited
    } else {
        Level::Shelf
    };

    while t < end {
        match level {
            Level::Ground => {
                if r == 0.0 {
                    dwell[0] += end - t;
                    break;
                }
                let lost_before_end = if p_block_end >= 1.0 {
                    0
                } else if p_block_end > 0.0 {
                    let u: f64 = rng.random();
                    let n = ((1.0 - u).ln() / ln_continue).floor();
                    if n < MAX_BLOCK_CYCLES as f64 { n as u64 } else { u64::MAX }
                } else {
                    u64::MAX
                };
                let (cycles, terminal) = if lost_before_end < MAX_BLOCK_CYCLES {
                    (lost_before_end + 1, true)
                } else {
                    (MAX_BLOCK_CYCLES, false)
                };
                let lost = cycles - terminal as u64;
                let shelved = if p_lost_shelved > 0.0 && lost > 0 {
                    let i = lost as usize;
                    if i >= shelved_given_lost.len() {
                        shelved_given_lost.resize(i + 1, None);
                    }
                    shelved_given_lost[i]
                        .get_or_insert_with(|| Binomial::new(lost, p_lost_shelved).unwrap())
                        .sample(rng)
                } else {
                    0
                };
                let kept = terminal && rng.random::<f64>() * p_block_end < p_kept;
                let block = Block {
                    cycles,
                    lost,
                    shelved,
                    tg: gamma_sum(rng, cycles, r),
                    te: gamma_sum(rng, cycles, out_e),
                    ts: gamma_sum(rng, shelved, q),
                };
                let t_end = t + block.tg + block.te + block.ts;
                if t_end < end {
                    dwell[0] += block.tg;
                    dwell[1] += block.te;
                    dwell[2] += block.ts;
                    emissions += lost - shelved + kept as u64;
                    t = t_end;
                    if kept {
                        photons.push(t.round() as u64);
                    } else if terminal {
                        level = Level::Shelf;
                    }
                } else {
                    emissions += block.clip(rng, t, end, &mut dwell);
                    t = end;
                }
            }
            Level::Excited => {
                let te = exp(rng, out_e);
                dwell[1] += te.min(end - t);
                t += te;
                if t >= end {
                    break;
                }
                let u: f64 = rng.random::<f64>() * out_e;
                if u < gamma {
                    emissions += 1;
                    if u < gamma * keep {
                        photons.push(t.round() as u64);
                    }
                    level = Level::Ground;
                } else {
                    level = Level::Shelf;
                }
            }
            Level::Shelf => {
                if q == 0.0 {
                    dwell[2] += end - t;
                    break;
                }
                let ts = exp(rng, q);
                dwell[2] += ts.min(end - t);
                t += ts;
                level = Level::Ground;
            }
        }
    }

    // Rounding to ticks can push the last photon onto `duration`.
    while photons.last().is_some_and(|&p| p >= duration_ps) {
        photons.pop();
    }
    Ok(Trajectory {
        photons: PhotonStream::from_sorted(photons, duration_ps, label),
        dwell_s: dwell.map(|d| d / PS_PER_S),
        emissions,
    })
}

/// Cycles per block when kept photons are rare; keeps the final-block
/// reconstruction bounded.
const MAX_BLOCK_CYCLES: u64 = 1 << 16;

fn exp(rng: &mut SimRng, rate: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / rate
}

/// Sum of `n` independent Exp(rate) times.
fn gamma_sum(rng: &mut SimRng, n: u64, rate: f64) -> f64 {
    match n {
        0 => 0.0,
        1 => exp(rng, rate),
        _ => Gamma::new(n as f64, 1.0 / rate).unwrap().sample(rng),
    }
}

/// Splits `total` into `n` parts distributed as the individual exponential
/// times of a Gamma(n) sum.
fn spacings(rng: &mut SimRng, n: u64, total: f64) -> Vec<f64> {
    let mut parts: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let sum: f64 = parts.iter().sum();
    if sum > 0.0 {
        parts.iter_mut().for_each(|p| *p *= total / sum);
    }
    parts
}

/// Aggregate dwell times of a run of g→e cycles.
struct Block {
    cycles: u64,
    lost: u64,
    shelved: u64,
    tg: f64,
    te: f64,
    ts: f64,
}

impl Block {
    /// Replays the block from `t` cycle by cycle up to `end`, adding the
    /// clipped dwell times. Returns the emissions completed before `end`.
    fn clip(&self, rng: &mut SimRng, mut t: f64, end: f64, dwell: &mut [f64; 3]) -> u64 {
        let g = spacings(rng, self.cycles, self.tg);
        let e = spacings(rng, self.cycles, self.te);
        let s = spacings(rng, self.shelved, self.ts);
        // Shelving excursions fall on a uniform subset of the lost cycles.
        let mut shelved_flags = vec![false; self.cycles as usize];
        let mut order: Vec<usize> = (0..self.lost as usize).collect();
        for i in 0..self.shelved as usize {
            let j = rng.random_range(i..order.len());
            order.swap(i, j);
            shelved_flags[order[i]] = true;
        }
        let mut emissions = 0;
        let mut next_shelf = 0;
        for c in 0..self.cycles as usize {
            for (state, dt) in [(0, g[c]), (1, e[c])] {
                dwell[state] += dt.min(end - t);
                t += dt;
                if t >= end {
                    return emissions;
                }
            }
            if shelved_flags[c] {
                let dt = s[next_shelf];
                next_shelf += 1;
                dwell[2] += dt.min(end - t);
                t += dt;
                if t >= end {
                    return emissions;
                }
            } else {
                emissions += 1;
            }
        }
        emissions
    }
}

/// Every radiative jump of one emitter over `duration_ns`.
pub fn simulate_emission(scheme: &LevelScheme, duration_ns: f64, seed: u64) -> Result<PhotonStream> {
    simulate_collected_emission(scheme, duration_ns, 1.0, seed)
}

/// Photons kept with probability `collection_efficiency` each.
///
/// Equal in distribution to thinning [`simulate_emission`], but the cost
/// scales with kept photons rather than emitted ones.
pub fn simulate_collected_emission(
    scheme: &LevelScheme,
    duration_ns: f64,
    collection_efficiency: f64,
    seed: u64,
) -> Result<PhotonStream> {
    Ok(simulate_trajectory(scheme, duration_ns, collection_efficiency, seed, 0)?.photons)
}

/// One trajectory, drawn from substream `index` of `seed`.
pub fn simulate_trajectory(
    scheme: &LevelScheme,
    duration_ns: f64,
    collection_efficiency: f64,
    seed: u64,
    index: u64,
) -> Result<Trajectory> {
    check("duration_ns", duration_ns, duration_ns > 0.0, "must be > 0")?;
    let mut rng = substream(seed, index);
    run_trajectory(
        scheme,
        ns_to_ps(duration_ns),
        collection_efficiency,
        &mut rng,
        "emission",
    )
}

/// `count` independent emitters, generated in parallel. Trajectory `i` uses
/// substream `i`, so the result does not depend on scheduling.
pub fn simulate_ensemble(
    scheme: &LevelScheme,
    duration_ns: f64,
    collection_efficiency: f64,
    seed: u64,
    count: usize,
) -> Result<Vec<PhotonStream>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            simulate_trajectory(scheme, duration_ns, collection_efficiency, seed, i)
                .map(|t| t.photons.with_label(format!("emitter{i}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shelving() -> LevelScheme {
        LevelScheme {
            pump_rate: 1e7,
            radiative_rate: 4e7,
            shelve_rate: 1e6,
            deshelve_rate: 3e5,
            pump_shelving_coefficient: 0.0,
        }
    }

    /// Gaussian elimination on the full 3×3 balance system with the
    /// normalization row replacing one balance equation.
    fn solve_balance(s: &LevelScheme) -> [f64; 3] {
        let (r, g, k, q) = (s.pump_rate, s.radiative_rate, s.effective_shelve_rate(), s.deshelve_rate);
        let mut m = [
            [-r, g, q, 0.0],
            [r, -(g + k), 0.0, 0.0],
            [1.0, 1.0, 1.0, 1.0],
        ];
        for col in 0..3 {
            let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
            m.swap(col, piv);
            for row in 0..3 {
                if row != col {
                    let f = m[row][col] / m[col][col];
                    for c in 0..4 {
                        m[row][c] -= f * m[col][c];
                    }
                }
            }
        }
        [m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]]
    }

    #[test]
    fn unpumped_emitter_sits_in_ground_state() {
        let occ = steady_state(&LevelScheme::two_level(0.0, 4e7)).unwrap();
        assert_eq!(occ.as_array(), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn two_level_balance() {
        let occ = steady_state(&LevelScheme::two_level(3e7, 3e7)).unwrap();
        assert!((occ.excited - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shelving_steady_state_matches_linear_solve() {
        let s = shelving();
        let expected = solve_balance(&s);
        let occ = steady_state(&s).unwrap().as_array();
        for (a, b) in occ.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{occ:?} vs {expected:?}");
        }
        // p_e = 1/(1 + 4.1 + 10/3) frozen from the independent solve.
        assert!((occ[1] - 0.118_577_075_098_814_2).abs() < 1e-12);
        assert!((occ.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_schemes() {
        assert!(steady_state(&LevelScheme::two_level(1.0, 0.0)).is_err());
        assert!(steady_state(&LevelScheme::two_level(-1.0, 1.0)).is_err());
        assert!(analytic_g2(&LevelScheme::two_level(0.0, 1e7), &[1.0]).is_err());
    }

    #[test]
    fn analytic_g2_rejects_negative_delay() {
        assert!(analytic_g2(&shelving(), &[-1.0]).is_err());
    }

    #[test]
    fn analytic_g2_two_level_closed_form() {
        let s = LevelScheme::two_level(2e7, 4e7);
        let delays: Vec<f64> = (0..200).map(|i| i as f64 * 0.37).collect();
        let g2 = analytic_g2(&s, &delays).unwrap();
        for (t, v) in delays.iter().zip(&g2.values) {
            let expected = 1.0 - (-0.06 * t).exp();
            assert!((v - expected).abs() <= 1e-12 * expected.abs().max(1e-300));
        }
    }

    #[test]
    fn shelving_produces_bunching() {
        let delays: Vec<f64> = (0..2000).map(|i| i as f64).collect();
        let g2 = analytic_g2(&shelving(), &delays).unwrap();
        assert_eq!(g2.values[0], 0.0);
        assert!(g2.values.iter().cloned().fold(0.0, f64::max) > 1.0);
        let tail = analytic_g2(&shelving(), &[1e6]).unwrap().values[0];
        assert!((tail - 1.0).abs() < 1e-6);
    }

    #[test]
    fn matrix_exponential_path_agrees_with_exponential_form() {
        let relax = Relaxation::new(&shelving()).unwrap();
        let p = relax.exponential_form().unwrap();
        for t in [0.5, 3.0, 17.0, 120.0, 900.0] {
            assert!((relax.g2_matrix_exponential(t) - p.g2(t)).abs() < 1e-10);
        }
    }

    #[test]
    fn complex_spectrum_still_relaxes_to_one() {
        // a ≈ q makes the discriminant negative: damped oscillation.
        let s = LevelScheme {
            pump_rate: 5e7,
            radiative_rate: 1e7,
            shelve_rate: 5e7,
            deshelve_rate: 1.1e8,
            pump_shelving_coefficient: 0.0,
        };
        assert!(three_level_parameters(&s).unwrap().is_none());
        let g2 = analytic_g2(&s, &[0.0, 5.0, 1e4]).unwrap();
        assert_eq!(g2.values[0], 0.0);
        assert!((g2.values[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pump_dependent_shelving_bends_saturation_down() {
        let mut s = shelving();
        s.pump_shelving_coefficient = 0.05;
        let powers: Vec<f64> = (0..=40).map(|i| i as f64 * 0.5).collect();
        let curve = emission_rate_vs_power(&s, 1e7, &powers).unwrap();
        let (imax, _) = curve
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .unwrap();
        assert!(imax > 0 && imax < curve.len() - 1);
        assert_eq!(curve[0].1, 0.0);
    }

    #[test]
    fn monotone_saturation_without_beta() {
        let powers: Vec<f64> = (0..=40).map(|i| i as f64 * 0.5).collect();
        let curve = emission_rate_vs_power(&shelving(), 1e7, &powers).unwrap();
        assert!(curve.windows(2).all(|w| w[1].1 > w[0].1));
    }

    #[test]
    fn high_pump_plateau() {
        let s = shelving();
        let plateau = emission_rate(&s.with_pump_rate(1e6 * s.radiative_rate)).unwrap();
        // Γ·q/(q + k) up to O(1/r) corrections.
        let limit = 4e7 * 3e5 / (3e5 + 1e6);
        assert!((plateau - limit).abs() / limit < 1e-5);
    }

    #[test]
    fn lifetime_formulas() {
        assert_eq!(lifetime_in_medium(3.0, 1.0, 1.0).unwrap(), 3.0);
        assert_eq!(lifetime_in_medium(1.0, 2.4, 1.0).unwrap(), 2.4);
        assert_eq!(lifetime_in_medium(1.0, 2.0, 1.5).unwrap(), 4.5);
        assert!(lifetime_in_medium(1.0, 0.9, 1.0).is_err());

        let tau = nanocrystal_lifetime(&MediumModel::default()).unwrap();
        assert!((tau - 22.7).abs() < 0.05);
        let air = MediumModel {
            substrate_index: 1.0,
            ..MediumModel::default()
        };
        assert!((nanocrystal_lifetime(&air).unwrap() - 27.84).abs() < 1e-12);
        let none = MediumModel {
            bulk_index: 1.0,
            substrate_index: 1.0,
            ..MediumModel::default()
        };
        assert!((nanocrystal_lifetime(&none).unwrap() - 11.6).abs() < 1e-12);
        let strong_local = MediumModel {
            local_field_factor: 1.7,
            ..MediumModel::default()
        };
        assert!((nanocrystal_lifetime(&strong_local).unwrap() - tau).abs() < 1e-12);
    }

    #[test]
    fn unpumped_simulation_is_empty() {
        let s = simulate_emission(&LevelScheme::two_level(0.0, 4e7), 1e6, 1).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn simulation_is_deterministic() {
        let a = simulate_emission(&shelving(), 1e6, 42).unwrap();
        let b = simulate_emission(&shelving(), 1e6, 42).unwrap();
        let c = simulate_emission(&shelving(), 1e6, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.timestamps().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn ensemble_matches_individual_trajectories() {
        let ens = simulate_ensemble(&shelving(), 1e5, 0.5, 9, 4).unwrap();
        for (i, s) in ens.iter().enumerate() {
            let single = simulate_trajectory(&shelving(), 1e5, 0.5, 9, i as u64).unwrap();
            assert_eq!(s.timestamps(), single.photons.timestamps());
        }
    }
}
