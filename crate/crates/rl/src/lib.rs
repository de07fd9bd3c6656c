//! Safe reinforcement learning on a finite integer chain: softmax policy
//! gradient and tabular Q-learning, each run through a fixed safety filter.

pub mod chain;
pub mod pg;
pub mod qlearn;

use serde::{Deserialize, Serialize};

pub use chain::{action_index, ChainMdp, SafetyFilterG, SoftmaxPolicy, ACTIONS};
pub use pg::{
    pg_update, policy_gradient, rollout, train_pg, Episode, PgConfig, PgIteration, PgResult,
};
pub use qlearn::{q_update, q_value_iteration, train_q, QConfig, QResult, QTable, Transition};

/// Step-size schedule `η_i = (i + shift)^(−exponent)` for iteration `i ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRate {
    pub exponent: f64,
    pub shift: f64,
}

impl LearningRate {
    pub fn power(exponent: f64, shift: f64) -> Self {
        Self { exponent, shift }
    }

    /// `1/√i`.
    pub fn inverse_sqrt() -> Self {
        Self::power(0.5, 0.0)
    }

    pub fn rate(&self, i: usize) -> f64 {
        (i as f64 + self.shift).powf(-self.exponent)
    }

    /// `Σ η_i = ∞` and `Σ η_i² < ∞`.
    pub fn robbins_monro(&self) -> bool {
        self.exponent > 0.5 && self.exponent <= 1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        assert_eq!(LearningRate::inverse_sqrt().rate(4), 0.5);
        let q = QConfig::default().learning_rate;
        assert!(q.robbins_monro());
        assert!(q.rate(1) < 1.0);
        assert!(!LearningRate::inverse_sqrt().robbins_monro());
        assert!(LearningRate::power(1.0, 0.0).robbins_monro());
    }
}
