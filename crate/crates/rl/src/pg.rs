//! Policy gradient through a fixed safety filter.

use psafe_core::rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{ChainMdp, SafetyFilterG, SoftmaxPolicy};
use crate::LearningRate;

/// One episode: states `x_0..x_H`, nominal and executed actions, and the
/// return accumulated from executed actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub states: Vec<i64>,
    pub nominal: Vec<i64>,
    pub executed: Vec<i64>,
    pub total_reward: f64,
}

impl Episode {
    pub fn max_state(&self) -> i64 {
        self.states.iter().copied().max().unwrap_or(0)
    }

    /// Steps taken from above `level` with an action other than `action`.
    pub fn unfiltered_steps_above(&self, level: i64, action: i64) -> usize {
        self.states
            .iter()
            .zip(&self.executed)
            .filter(|(&x, &u)| x > level && u != action)
            .count()
    }
}

/// Samples nominal actions from `policy`, executes them through `filter`.
/// A zero horizon gives a single-state episode.
pub fn rollout(
    mdp: &ChainMdp,
    policy: &SoftmaxPolicy,
    filter: &SafetyFilterG,
    x0: i64,
    horizon: usize,
    seed: u64,
) -> Episode {
    let mut r = rng::rng(seed);
    let mut x = x0;
    let mut ep = Episode {
        states: vec![x],
        nominal: Vec::with_capacity(horizon),
        executed: Vec::with_capacity(horizon),
        total_reward: 0.0,
    };
    for _ in 0..horizon {
        let nominal = policy.sample(x, &mut r);
        let u = filter.apply(x, nominal);
        ep.total_reward += mdp.reward(x, u);
        x = mdp.step(x, u, &mut r);
        ep.nominal.push(nominal);
        ep.executed.push(u);
        ep.states.push(x);
    }
    ep
}

/// Batch mean of `R(τ)·Σ_t ∂_θ log π_θ(û_t | x_t)`, scored on the nominal
/// actions.
pub fn policy_gradient(episodes: &[Episode], policy: &SoftmaxPolicy) -> f64 {
    if episodes.is_empty() {
        return 0.0;
    }
    let total: f64 = episodes
        .iter()
        .map(|ep| {
            let score: f64 = ep
                .states
                .iter()
                .zip(&ep.nominal)
                .map(|(&x, &u)| policy.score(x, u))
                .sum();
            ep.total_reward * score
        })
        .sum();
    total / episodes.len() as f64
}

pub fn pg_update(
    episodes: &[Episode],
    policy: &SoftmaxPolicy,
    learning_rate: f64,
) -> SoftmaxPolicy {
    SoftmaxPolicy::new(policy.theta + learning_rate * policy_gradient(episodes, policy))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgConfig {
    pub iterations: usize,
    pub episodes: usize,
    pub horizon: usize,
    pub x0: i64,
    pub theta0: f64,
    pub learning_rate: LearningRate,
}

impl Default for PgConfig {
    fn default() -> Self {
        Self {
            iterations: 1500,
            episodes: 10,
            horizon: 10,
            x0: 0,
            theta0: 0.0,
            learning_rate: LearningRate::inverse_sqrt(),
        }
    }
}

/// Per-iteration training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgIteration {
    pub iteration: usize,
    pub theta: f64,
    pub mean_return: f64,
    pub max_state: i64,
    /// Steps where the filter changed the nominal action.
    pub interventions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgResult {
    pub curve: Vec<PgIteration>,
    pub policy: SoftmaxPolicy,
    /// Every executed action taken from above 5 that was not −1, summed over
    /// all episodes of all iterations.
    pub steps_above_five_not_down: usize,
    pub max_state: i64,
}

/// Seed of episode `e` in iteration `i` (1-based).
pub fn episode_seed(master: u64, iteration: usize, episode: usize, per_iteration: usize) -> u64 {
    rng::split(master, ((iteration - 1) * per_iteration + episode) as u64)
}

pub fn train_pg(mdp: &ChainMdp, filter: &SafetyFilterG, cfg: &PgConfig, seed: u64) -> PgResult {
    let mut policy = SoftmaxPolicy::new(cfg.theta0);
    let mut curve = Vec::with_capacity(cfg.iterations);
    let (mut bad, mut max_state) = (0, cfg.x0);
    for i in 1..=cfg.iterations {
        let episodes: Vec<Episode> = (0..cfg.episodes)
            .into_par_iter()
            .map(|e| {
                rollout(
                    mdp,
                    &policy,
                    filter,
                    cfg.x0,
                    cfg.horizon,
                    episode_seed(seed, i, e, cfg.episodes),
                )
            })
            .collect();
        let mean_return =
            episodes.iter().map(|e| e.total_reward).sum::<f64>() / cfg.episodes.max(1) as f64;
        let iter_max = episodes
            .iter()
            .map(Episode::max_state)
            .max()
            .unwrap_or(cfg.x0);
        bad += episodes
            .iter()
            .map(|e| e.unfiltered_steps_above(5, -1))
            .sum::<usize>();
        max_state = max_state.max(iter_max);
        let interventions = episodes
            .iter()
            .map(|e| {
                e.nominal
                    .iter()
                    .zip(&e.executed)
                    .filter(|(a, b)| a != b)
                    .count()
            })
            .sum();
        policy = pg_update(&episodes, &policy, cfg.learning_rate.rate(i));
        curve.push(PgIteration {
            iteration: i,
            theta: policy.theta,
            mean_return,
            max_state: iter_max,
            interventions,
        });
    }
    PgResult {
        curve,
        policy,
        steps_above_five_not_down: bad,
        max_state,
    }
}
