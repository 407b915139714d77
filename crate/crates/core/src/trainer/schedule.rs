//! Exploration, discount and step-size schedules.

use serde::{Deserialize, Serialize};

/// `γ_c(n) = 1 - (1 - γ_c0) / (1 + n / τ)`, nondecreasing with limit 1.
pub fn gamma_c_schedule(n: u64, gamma_c0: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return gamma_c0;
    }
    1.0 - (1.0 - gamma_c0) / (1.0 + n as f64 / tau)
}

/// Linear decay from `start` to `end` over the first `fraction` of `total` steps.
pub fn epsilon(step: u64, total: u64, start: f64, end: f64, fraction: f64) -> f64 {
    let span = (total as f64 * fraction).max(1.0);
    let p = step as f64 / span;
    if p >= 1.0 {
        end
    } else {
        start + p * (end - start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSizes {
    Constant { alpha_r: f64, alpha_c: f64 },
    /// Per-entry visit-count schedules `a(n) = n^-0.55` for the safety critic and
    /// `b(n) = n^-0.7` for the reward critic, so `b ∈ o(a)`.
    ThreeTimescale,
}

pub const SAFETY_EXPONENT: f64 = 0.55;
pub const REWARD_EXPONENT: f64 = 0.7;

impl StepSizes {
    /// `(α_r, α_c)` for an entry on its `n`-th update (`n >= 1`).
    pub fn at(&self, n: u64) -> (f64, f64) {
        match *self {
            StepSizes::Constant { alpha_r, alpha_c } => (alpha_r, alpha_c),
            StepSizes::ThreeTimescale => {
                let n = n.max(1) as f64;
                (n.powf(-REWARD_EXPONENT), n.powf(-SAFETY_EXPONENT))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_c_examples() {
        assert_eq!(gamma_c_schedule(0, 0.85, 1000.0), 0.85);
        assert!((gamma_c_schedule(1000, 0.85, 1000.0) - 0.925).abs() < 1e-15);
        assert!(gamma_c_schedule(u64::MAX, 0.85, 1000.0) > 1.0 - 1e-12);
        let mut prev = 0.0;
        for n in (0..100_000).step_by(997) {
            let g = gamma_c_schedule(n, 0.85, 2500.0);
            assert!(g >= prev && g < 1.0);
            prev = g;
        }
    }

    #[test]
    fn epsilon_linear() {
        assert_eq!(epsilon(0, 100, 1.0, 0.05, 0.5), 1.0);
        assert!((epsilon(25, 100, 1.0, 0.05, 0.5) - 0.525).abs() < 1e-12);
        assert_eq!(epsilon(50, 100, 1.0, 0.05, 0.5), 0.05);
        assert_eq!(epsilon(99, 100, 1.0, 0.05, 0.5), 0.05);
    }

    #[test]
    fn three_timescale_rates() {
        // Robbins-Monro: exponents in (1/2, 1]; reward critic slower
        const { assert!(SAFETY_EXPONENT > 0.5 && SAFETY_EXPONENT <= 1.0) };
        const { assert!(REWARD_EXPONENT > SAFETY_EXPONENT && REWARD_EXPONENT <= 1.0) };
        let s = StepSizes::ThreeTimescale;
        assert_eq!(s.at(1), (1.0, 1.0));
        let (r, c) = s.at(10_000);
        assert!(r < c);
        let (r2, c2) = s.at(1_000_000);
        assert!(r2 / c2 < r / c);
        assert_eq!(StepSizes::Constant { alpha_r: 0.1, alpha_c: 0.2 }.at(7), (0.1, 0.2));
    }
}
