//! Reinforcement-learning runs on the finite chain, configured from a TOML
//! file.

use std::path::Path;

use psafe_core::rng;
use psafe_rl::{
    rollout, train_pg, train_q, ChainMdp, Episode, PgConfig, PgResult, QConfig, QResult,
    SafetyFilterG,
};
use serde::{Deserialize, Serialize};

use crate::error::{ExperimentError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlScenario {
    pub schema_version: u32,
    pub name: String,
    /// Probability of each of the ±1 noise moves.
    pub p: f64,
    pub seed: u64,
    /// Episodes rolled out with the trained policy for the path output.
    pub sample_paths: usize,
    pub filter: SafetyFilterG,
    pub pg: PgConfig,
    pub q: QConfig,
}

impl Default for RlScenario {
    fn default() -> Self {
        Self {
            schema_version: crate::scenario::SCHEMA_VERSION,
            name: "chain".into(),
            p: 0.08,
            seed: 7,
            sample_paths: 5,
            filter: SafetyFilterG::standard(),
            pg: PgConfig::default(),
            q: QConfig::default(),
        }
    }
}

impl RlScenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: RlScenario =
            toml::from_str(text).map_err(|e| ExperimentError::Scenario(e.to_string()))?;
        if s.schema_version != crate::scenario::SCHEMA_VERSION {
            return Err(ExperimentError::Scenario(format!(
                "schema version {} is not supported",
                s.schema_version
            )));
        }
        if !(s.p > 0.0 && s.p <= 0.5) {
            return Err(ExperimentError::Scenario(format!(
                "noise probability {} outside (0, 0.5]",
                s.p
            )));
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ExperimentError::Scenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| ExperimentError::io(path, e))
    }

    pub fn mdp(&self) -> Result<ChainMdp> {
        Ok(ChainMdp::new(self.p)?)
    }

    fn filter(&self, filtered: bool) -> SafetyFilterG {
        if filtered {
            self.filter
        } else {
            SafetyFilterG::PassThrough
        }
    }
}

pub struct PgRun {
    pub filtered: bool,
    pub result: PgResult,
    /// Episodes of the trained policy.
    pub paths: Vec<Episode>,
}

pub fn run_pg(s: &RlScenario, filtered: bool, seed: u64) -> Result<PgRun> {
    let mdp = s.mdp()?;
    let filter = s.filter(filtered);
    let result = train_pg(&mdp, &filter, &s.pg, seed);
    let paths_seed = rng::purpose(seed, "sample-paths");
    let paths = (0..s.sample_paths)
        .map(|e| {
            rollout(
                &mdp,
                &result.policy,
                &filter,
                s.pg.x0,
                s.pg.horizon,
                rng::split(paths_seed, e as u64),
            )
        })
        .collect();
    Ok(PgRun {
        filtered,
        result,
        paths,
    })
}

pub fn run_q(s: &RlScenario, filtered: bool, seed: u64) -> Result<QResult> {
    let mdp = s.mdp()?;
    Ok(train_q(&mdp, &s.filter(filtered), &s.q, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let s = RlScenario::default();
        let text = s.to_toml().unwrap();
        assert_eq!(RlScenario::from_toml(&text).unwrap(), s);
        assert_eq!(RlScenario::from_toml("").unwrap(), s);
        assert!(RlScenario::from_toml("p = 0.7").is_err());
    }

    #[test]
    fn short_runs_are_reproducible() {
        let mut s = RlScenario::default();
        s.pg.iterations = 30;
        s.q.iterations = 30;
        let a = run_pg(&s, true, 3).unwrap();
        let b = run_pg(&s, true, 3).unwrap();
        assert_eq!(a.result.curve, b.result.curve);
        assert_eq!(a.paths, b.paths);
        assert!(a.paths.iter().all(|p| p.max_state() <= 7));
        assert_eq!(run_q(&s, false, 3).unwrap(), run_q(&s, false, 3).unwrap());
    }
}
