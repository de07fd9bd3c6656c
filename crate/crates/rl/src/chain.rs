//! The 11-state integer chain, its softmax policy class and the state-rule
//! safety filter.

use psafe_core::estimation::LatticeChain;
use psafe_core::rng::SimRng;
use psafe_core::Result;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Action set `{−1, 0, +1}`.
pub const ACTIONS: [i64; 3] = [-1, 0, 1];

/// Index of `u` in [`ACTIONS`].
pub fn action_index(u: i64) -> usize {
    (u + 1) as usize
}

/// `x' = clip(x + u + w)` on `{0, …, 10}` with reward `(x − 5)/10`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainMdp {
    pub chain: LatticeChain,
}

impl ChainMdp {
    /// Symmetric noise with `P(w = ±1) = p`.
    pub fn new(p: f64) -> Result<Self> {
        Ok(Self {
            chain: LatticeChain::symmetric(0, 10, p)?,
        })
    }

    /// `p = 0.08`, matching a per-unit-time noise variance of `0.4² = 0.16`.
    pub fn standard() -> Self {
        Self::new(0.08).expect("valid noise law")
    }

    pub fn states(&self) -> Vec<i64> {
        self.chain.states()
    }

    pub fn state_count(&self) -> usize {
        (self.chain.hi - self.chain.lo + 1) as usize
    }

    pub fn reward(&self, x: i64, _u: i64) -> f64 {
        (x - 5) as f64 / 10.0
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.states()
            .iter()
            .map(|&x| self.reward(x, 0).abs())
            .fold(0.0, f64::max)
    }

    pub fn row(&self, x: i64, u: i64) -> Vec<(i64, f64)> {
        self.chain.row(x, u)
    }

    pub fn step(&self, x: i64, u: i64, rng: &mut SimRng) -> i64 {
        let mut draw: f64 = rng.random();
        for &(w, p) in &self.chain.noise {
            if draw < p {
                return self.chain.clip(x + u + w);
            }
            draw -= p;
        }
        let last = self.chain.noise.last().expect("non-empty noise law").0;
        self.chain.clip(x + u + last)
    }
}

/// `π_θ(u | x) ∝ exp(θ·x·u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub theta: f64,
}

impl SoftmaxPolicy {
    pub fn new(theta: f64) -> Self {
        Self { theta }
    }

    pub fn probs(&self, x: i64) -> [f64; 3] {
        let logits = ACTIONS.map(|u| self.theta * (x * u) as f64);
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e = logits.map(|l| (l - m).exp());
        let z: f64 = e.iter().sum();
        e.map(|v| v / z)
    }

    pub fn log_prob(&self, x: i64, u: i64) -> f64 {
        self.probs(x)[action_index(u)].ln()
    }

    /// `∂_θ log π_θ(u | x) = x·u − x·E_π[u]`.
    pub fn score(&self, x: i64, u: i64) -> f64 {
        let p = self.probs(x);
        let mean_u: f64 = ACTIONS.iter().zip(&p).map(|(&a, q)| a as f64 * q).sum();
        x as f64 * (u as f64 - mean_u)
    }

    pub fn sample(&self, x: i64, rng: &mut SimRng) -> i64 {
        let p = self.probs(x);
        let mut draw: f64 = rng.random();
        for (u, q) in ACTIONS.iter().zip(p) {
            if draw < q {
                return *u;
            }
            draw -= q;
        }
        ACTIONS[2]
    }
}

/// Map from state and nominal action to the executed action. It holds no
/// policy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SafetyFilterG {
    /// Executes the nominal action.
    PassThrough,
    /// Forces `action` whenever the state exceeds `above`.
    Threshold { above: i64, action: i64 },
}

impl SafetyFilterG {
    /// Steers down whenever the state exceeds 5.
    pub fn standard() -> Self {
        SafetyFilterG::Threshold {
            above: 5,
            action: -1,
        }
    }

    pub fn apply(&self, x: i64, nominal: i64) -> i64 {
        match *self {
            SafetyFilterG::PassThrough => nominal,
            SafetyFilterG::Threshold { above, action } if x > above => action,
            SafetyFilterG::Threshold { .. } => nominal,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use psafe_core::rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn chain_kernel_and_reward() {
        let m = ChainMdp::standard();
        assert_eq!(m.state_count(), 11);
        for x in m.states() {
            for u in ACTIONS {
                let s: f64 = m.row(x, u).iter().map(|e| e.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
            assert_eq!(m.reward(x, 1), (x as f64 - 5.0) / 10.0);
        }
        assert_eq!(m.max_abs_reward(), 0.5);
        let var: f64 = m.chain.noise.iter().map(|(w, p)| (w * w) as f64 * p).sum();
        assert!((var - 0.16).abs() < 1e-12);
    }

    #[test]
    fn sampled_steps_follow_the_kernel() {
        let m = ChainMdp::standard();
        let mut r = rng::rng(4);
        let n = 100_000;
        let mut counts = [0usize; 11];
        for _ in 0..n {
            counts[m.step(5, 1, &mut r) as usize] += 1;
        }
        for (y, p) in m.row(5, 1) {
            let f = counts[y as usize] as f64 / n as f64;
            assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt());
        }
    }

    #[test]
    fn zero_parameter_policy_is_uniform() {
        let pi = SoftmaxPolicy::new(0.0);
        let mut r = rng::rng(11);
        let n = 10_000;
        let mut counts = [0usize; 3];
        for i in 0..n {
            counts[action_index(pi.sample((i % 11) as i64, &mut r))] += 1;
        }
        let e = n as f64 / 3.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        let p = 1.0 - ChiSquared::new(2.0).unwrap().cdf(chi2);
        assert!(p > 0.001, "chi2 {chi2}, p {p}");
    }

    #[test]
    fn score_matches_finite_differences() {
        let h = 1e-5;
        for theta in [-0.7, 0.0, 0.3, 1.2] {
            for x in 0..=10 {
                for u in ACTIONS {
                    let fd = (SoftmaxPolicy::new(theta + h).log_prob(x, u)
                        - SoftmaxPolicy::new(theta - h).log_prob(x, u))
                        / (2.0 * h);
                    let s = SoftmaxPolicy::new(theta).score(x, u);
                    assert!((fd - s).abs() < 1e-6, "θ={theta} x={x} u={u}: {fd} vs {s}");
                }
            }
        }
        assert_eq!(SoftmaxPolicy::new(0.0).score(2, 1), 2.0);
    }

    #[test]
    fn filter_rules() {
        let g = SafetyFilterG::standard();
        for x in 0..=10 {
            for u in ACTIONS {
                let out = g.apply(x, u);
                assert_eq!(out, if x > 5 { -1 } else { u });
                assert_eq!(SafetyFilterG::PassThrough.apply(x, u), u);
            }
        }
    }
}
