//! Tabular Q-learning with the safety filter treated as part of the
//! environment.

use psafe_core::rng::{self, SimRng};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{action_index, ChainMdp, SafetyFilterG, ACTIONS};
use crate::LearningRate;

/// `Q(x, u)` for `x ∈ {0, …, n−1}` and `u ∈ {−1, 0, +1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub q: Vec<[f64; 3]>,
    pub gamma: f64,
}

impl QTable {
    pub fn zeros(states: usize, gamma: f64) -> Self {
        Self {
            q: vec![[0.0; 3]; states],
            gamma,
        }
    }

    pub fn get(&self, x: i64, u: i64) -> f64 {
        self.q[x as usize][action_index(u)]
    }

    pub fn row(&self, x: i64) -> [f64; 3] {
        self.q[x as usize]
    }

    pub fn max(&self, x: i64) -> f64 {
        self.row(x)
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action, lowest action on ties.
    pub fn argmax(&self, x: i64) -> i64 {
        let row = self.row(x);
        let mut best = 0;
        for i in 1..3 {
            if row[i] > row[best] {
                best = i;
            }
        }
        ACTIONS[best]
    }

    pub fn max_abs(&self) -> f64 {
        self.q.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        self.q
            .iter()
            .flatten()
            .zip(other.q.iter().flatten())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// One observed transition `(x, u, r, x')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub x: i64,
    pub u: i64,
    pub reward: f64,
    pub next: i64,
}

/// `Q(x,u) ← Q(x,u) + η(r + γ max_{u'} Q(x',u') − Q(x,u))`.
pub fn q_update(table: &mut QTable, t: Transition, learning_rate: f64) {
    let target = t.reward + table.gamma * table.max(t.next);
    let cell = &mut table.q[t.x as usize][action_index(t.u)];
    *cell += learning_rate * (target - *cell);
}

/// Fixed point of the filtered Bellman operator by value iteration.
pub fn q_value_iteration(mdp: &ChainMdp, filter: &SafetyFilterG, gamma: f64, tol: f64) -> QTable {
    let mut q = QTable::zeros(mdp.state_count(), gamma);
    loop {
        let mut next = q.clone();
        for x in mdp.states() {
            for u in ACTIONS {
                let executed = filter.apply(x, u);
                let ev: f64 = mdp
                    .row(x, executed)
                    .iter()
                    .map(|(y, p)| p * q.max(*y))
                    .sum();
                next.q[x as usize][action_index(u)] = mdp.reward(x, executed) + gamma * ev;
            }
        }
        let diff = next.max_abs_diff(&q);
        q = next;
        if diff < tol {
            return q;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QConfig {
    pub iterations: usize,
    /// Steps per iteration, each followed by one update.
    pub steps: usize,
    pub gamma: f64,
    pub x0: i64,
    /// Probability of a uniformly random nominal action.
    pub exploration: f64,
    pub learning_rate: LearningRate,
}

impl Default for QConfig {
    fn default() -> Self {
        Self {
            iterations: 1500,
            steps: 30,
            gamma: 0.9,
            x0: 0,
            exploration: 0.1,
            learning_rate: LearningRate::power(0.7, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QResult {
    pub table: QTable,
    /// `Q(x0, ·)` after each iteration.
    pub history: Vec<[f64; 3]>,
    /// Largest `|Q|` seen after any update.
    pub max_abs: f64,
    /// Largest change of `Q(x0, ·)` over the final iteration.
    pub final_change: f64,
    pub max_state: i64,
}

fn choose(table: &QTable, x: i64, exploration: f64, r: &mut SimRng) -> i64 {
    if r.random::<f64>() < exploration {
        return ACTIONS[r.random_range(0..3)];
    }
    let row = table.row(x);
    let best = table.max(x);
    let ties: Vec<usize> = (0..3).filter(|&i| row[i] == best).collect();
    ACTIONS[ties[r.random_range(0..ties.len())]]
}

/// Updates are made at the agent's chosen action; the filter only changes
/// what the environment executes.
pub fn train_q(mdp: &ChainMdp, filter: &SafetyFilterG, cfg: &QConfig, seed: u64) -> QResult {
    let mut table = QTable::zeros(mdp.state_count(), cfg.gamma);
    let mut history = Vec::with_capacity(cfg.iterations);
    let (mut max_abs, mut final_change, mut max_state) = (0.0f64, 0.0, cfg.x0);
    for i in 1..=cfg.iterations {
        let mut r = rng::rng(rng::split(seed, i as u64));
        let eta = cfg.learning_rate.rate(i);
        let before = table.row(cfg.x0);
        let mut x = cfg.x0;
        for _ in 0..cfg.steps {
            let chosen = choose(&table, x, cfg.exploration, &mut r);
            let executed = filter.apply(x, chosen);
            let next = mdp.step(x, executed, &mut r);
            let t = Transition {
                x,
                u: chosen,
                reward: mdp.reward(x, executed),
                next,
            };
            q_update(&mut table, t, eta);
            max_abs = max_abs.max(table.get(x, chosen).abs());
            max_state = max_state.max(next);
            x = next;
        }
        let after = table.row(cfg.x0);
        final_change = (0..3).fold(0.0f64, |m, k| m.max((after[k] - before[k]).abs()));
        history.push(after);
    }
    QResult {
        table,
        history,
        max_abs,
        final_change,
        max_state,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(x: i64, u: i64, reward: f64, next: i64) -> Transition {
        Transition { x, u, reward, next }
    }

    #[test]
    fn update_examples() {
        let mut q = QTable::zeros(3, 0.9);
        q.q[1] = [0.2, 0.5, -0.1];
        let before = q.clone();
        q_update(&mut q, t(0, 1, 0.3, 1), 0.0);
        assert_eq!(q, before);
        q_update(&mut q, t(0, 1, 0.3, 1), 0.5);
        assert!((q.get(0, 1) - 0.5 * (0.3 + 0.9 * 0.5)).abs() < 1e-15);
        let mut changed = 0;
        for x in 0..3 {
            for u in ACTIONS {
                changed += (q.get(x, u) != before.get(x, u)) as usize;
            }
        }
        assert_eq!(changed, 1);
        let mut myopic = QTable::zeros(3, 0.0);
        myopic.q[2] = [9.0; 3];
        q_update(&mut myopic, t(1, -1, 0.3, 2), 1.0);
        assert_eq!(myopic.get(1, -1), 0.3);
    }

    #[test]
    fn sweeps_converge_to_value_iteration() {
        // Deterministic two-state chain: action +1 moves to state 1, −1 to 0.
        let gamma = 0.9;
        let reward = |x: i64| if x == 1 { 1.0 } else { -0.5 };
        let next = |x: i64, u: i64| (x + u).clamp(0, 1);
        let mut vi = QTable::zeros(2, gamma);
        for _ in 0..2000 {
            let prev = vi.clone();
            for x in 0..2 {
                for u in ACTIONS {
                    vi.q[x as usize][action_index(u)] = reward(x) + gamma * prev.max(next(x, u));
                }
            }
        }
        let mut q = QTable::zeros(2, gamma);
        let schedule = LearningRate::power(0.7, 1.0);
        for i in 1..=200_000 {
            let eta = schedule.rate(i);
            for x in 0..2 {
                for u in ACTIONS {
                    q_update(&mut q, t(x, u, reward(x), next(x, u)), eta);
                }
            }
        }
        // With 1/i steps the error decays only like i^−(1−γ), so the slower
        // (i+1)^−0.7 schedule is used.
        assert!(q.max_abs_diff(&vi) < 1e-4, "{}", q.max_abs_diff(&vi));
    }

    #[test]
    fn myopic_learning_recovers_rewards() {
        let m = ChainMdp::standard();
        let cfg = QConfig {
            gamma: 0.0,
            iterations: 300,
            exploration: 1.0,
            ..Default::default()
        };
        let res = train_q(&m, &SafetyFilterG::PassThrough, &cfg, 5);
        for x in 0..=3 {
            for u in ACTIONS {
                assert!((res.table.get(x, u) - m.reward(x, u)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn value_iteration_oracle_at_origin() {
        let m = ChainMdp::standard();
        let free = q_value_iteration(&m, &SafetyFilterG::PassThrough, 0.9, 1e-12);
        let safe = q_value_iteration(&m, &SafetyFilterG::standard(), 0.9, 1e-12);
        assert_eq!(free.argmax(0), 1);
        for u in ACTIONS {
            assert!(safe.get(0, u) < free.get(0, u));
        }
        assert!(free.max_abs() <= 5.0 && safe.max_abs() <= 5.0);
    }

    #[test]
    fn training_stays_bounded_and_learns_upward_action() {
        let m = ChainMdp::standard();
        let res = train_q(&m, &SafetyFilterG::PassThrough, &QConfig::default(), 21);
        assert!(res.max_abs <= 0.5 / (1.0 - 0.9));
        assert_eq!(res.table.argmax(0), 1);
        let filtered = train_q(&m, &SafetyFilterG::standard(), &QConfig::default(), 21);
        assert!(filtered.max_state <= 7);
        assert!(filtered.max_abs <= 5.0);
    }
}
