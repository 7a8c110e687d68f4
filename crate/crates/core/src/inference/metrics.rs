use serde::{Deserialize, Serialize};

use crate::error::{check, Result};

/// Number of emitters inferred from g²(0) = 1 − 1/p.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterCount {
    pub estimate: f64,
    pub rounded: u32,
    /// Set when the estimate lies more than 0.25 from the nearest integer.
    pub ambiguous: bool,
}

pub fn estimate_emitter_count(g2_zero: f64) -> Result<EmitterCount> {
    check(
        "g2_zero",
        g2_zero,
        (0.0..1.0).contains(&g2_zero),
        "must be in [0, 1); g2(0) >= 1 shows no antibunching",
    )?;
    let estimate = 1.0 / (1.0 - g2_zero);
    let nearest = estimate.round().max(1.0);
    Ok(EmitterCount {
        estimate,
        rounded: nearest as u32,
        ambiguous: (estimate - nearest).abs() > 0.25,
    })
}

/// Probability of two or more photons per pulse, p₂ = C_N(0)·p₁²/2 (valid for p₂ ≪ 1).
pub fn multiphoton_probability(cn_zero: f64, p1: f64) -> Result<f64> {
    check("cn_zero", cn_zero, cn_zero >= 0.0, "must be >= 0")?;
    check("p1", p1, (0.0..=1.0).contains(&p1), "must be in [0, 1]")?;
    Ok(cn_zero * p1 * p1 / 2.0)
}

/// Suppression of multiphoton pulses relative to an attenuated coherent
/// pulse of equal p₁: 1/C_N(0).
pub fn coherent_improvement(cn_zero: f64) -> Result<f64> {
    check("cn_zero", cn_zero, cn_zero > 0.0, "must be > 0")?;
    Ok(1.0 / cn_zero)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emitter_counts() {
        assert_eq!(estimate_emitter_count(0.0).unwrap().rounded, 1);
        assert_eq!(estimate_emitter_count(0.5).unwrap().estimate, 2.0);
        let eight = estimate_emitter_count(0.875).unwrap();
        assert_eq!(eight.estimate, 8.0);
        assert_eq!(eight.rounded, 8);
        assert!(!eight.ambiguous);
        let single = estimate_emitter_count(0.05).unwrap();
        assert_eq!(single.rounded, 1);
        assert!(estimate_emitter_count(0.6).unwrap().ambiguous);
        assert!(estimate_emitter_count(1.0).is_err());
        assert!(estimate_emitter_count(-0.1).is_err());
    }

    #[test]
    fn multiphoton() {
        assert!((multiphoton_probability(0.17, 0.1).unwrap() - 8.5e-4).abs() < 1e-18);
        assert!((multiphoton_probability(1.0, 0.1).unwrap() - 5e-3).abs() < 1e-18);
        assert_eq!(multiphoton_probability(0.3, 0.0).unwrap(), 0.0);
        assert!((coherent_improvement(0.17).unwrap() - 5.882_352_941).abs() < 1e-8);
    }
}
