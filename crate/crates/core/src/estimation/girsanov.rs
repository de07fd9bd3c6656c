//! Path-integral importance sampling: estimate a policy's safety probability
//! from paths simulated under a different sampling policy, reweighted by the
//! Girsanov likelihood ratio.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mc::{horizon_steps, Estimate};
use crate::error::{Error, Result};
use crate::rng;
use crate::sde::{
    em_step, AugmentedState, BarrierSpec, NoiseSource, Policy, SafetyType, SdeSystem, State,
};
use crate::stats::mean_stderr;

/// Sign of the quadratic term in the log-likelihood ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadraticSign {
    /// `Σ Ũᵀ dW − ½ ‖Ũ‖² dt`, the change of measure for increments recorded
    /// under the sampling policy.
    Minus,
    /// `Σ Ũᵀ dW + ½ ‖Ũ‖² dt`.
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceConfig {
    /// Largest admissible log-weight before the sampler gives up.
    pub log_weight_cap: f64,
    pub sign: QuadraticSign,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        Self {
            log_weight_cap: 50.0,
            sign: QuadraticSign::Minus,
        }
    }
}

/// Log of `dP_N / dP_{N_s}` along one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GirsanovWeight {
    pub log_w: f64,
}

impl GirsanovWeight {
    pub fn weight(self) -> f64 {
        self.log_w.exp()
    }
}

/// Reweights paths of `sampling` to estimate probabilities under `target`.
///
/// The drift difference `g (N − N_s)` must be expressible through the noise
/// channels, `σ Ũ = g (N − N_s)`. The input and noise dimensions therefore
/// have to agree; when `g = σ` this reduces to `Ũ = N − N_s`.
pub struct ImportanceSampler<'a> {
    sys: &'a SdeSystem,
    spec: &'a BarrierSpec,
    cfg: ImportanceConfig,
}

impl<'a> ImportanceSampler<'a> {
    pub fn new(sys: &'a SdeSystem, spec: &'a BarrierSpec, cfg: ImportanceConfig) -> Result<Self> {
        if sys.input_dim() != sys.noise_dim() {
            return Err(Error::Config(format!(
                "importance sampling needs input and noise of equal dimension, got {} and {}",
                sys.input_dim(),
                sys.noise_dim()
            )));
        }
        match spec.safety_type {
            SafetyType::Invariance | SafetyType::Reach => {}
            other => {
                return Err(Error::Config(format!(
                    "sampling estimators handle types 1 and 3, not {}",
                    other.code()
                )))
            }
        }
        Ok(Self { sys, spec, cfg })
    }

    /// Noise-space control difference `Ũ` at `x`.
    fn control_gap(
        &self,
        x: &State,
        target: &DVector<f64>,
        sampling: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let d = target - sampling;
        if d.iter().all(|&c| c == 0.0) {
            return Ok(DVector::zeros(self.sys.noise_dim()));
        }
        let g = self.sys.input_matrix(x)?;
        let s = self.sys.diffusion(x)?;
        if g == s {
            return Ok(d);
        }
        let rhs = &g * &d;
        let svd = s.clone().svd(true, true);
        let u = svd
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Config(format!("diffusion not invertible: {e}")))?;
        let resid = (&s * &u - &rhs).norm();
        if resid > 1e-9 * (1.0 + rhs.norm()) {
            return Err(Error::Config(
                "input direction lies outside the noise range; paths cannot be reweighted".into(),
            ));
        }
        Ok(u)
    }

    /// One path under `sampling`: the safety indicator and its log-weight.
    fn path(
        &self,
        target: &dyn Policy,
        sampling: &dyn Policy,
        z0: &AugmentedState,
        steps: usize,
        dt: f64,
        seed: u64,
    ) -> Result<(f64, GirsanovWeight, bool)> {
        let reach = self.spec.safety_type == SafetyType::Reach;
        let mut noise = NoiseSource::new(seed, dt, self.sys.noise_dim());
        let mut x = z0.x.clone();
        let mut happened = self.spec.contains(&x, z0.margin) == reach;
        let mut log_w = 0.0;
        let mut diverged = false;
        for k in 0..steps {
            let t = k as f64 * dt;
            let us = sampling.act(t, &x);
            let un = target.act(t, &x);
            let gap = self.control_gap(&x, &un, &us)?;
            let dw = noise.next_increment();
            let quad = 0.5 * gap.norm_squared() * dt;
            log_w += gap.dot(&dw)
                + match self.cfg.sign {
                    QuadraticSign::Minus => -quad,
                    QuadraticSign::Plus => quad,
                };
            match em_step(self.sys, &x, &us, dt, &dw) {
                Ok(next) => x = next,
                Err(_) => {
                    diverged = true;
                    if !reach {
                        happened = true;
                    }
                    break;
                }
            }
            if !happened && self.spec.contains(&x, z0.margin) == reach {
                happened = true;
            }
        }
        let s = if happened == reach { 1.0 } else { 0.0 };
        Ok((s, GirsanovWeight { log_w }, diverged))
    }

    /// Estimate of the target policy's type-1/3 probability from `n_sample`
    /// paths of the sampling policy.
    pub fn estimate(
        &self,
        target: &dyn Policy,
        sampling: &dyn Policy,
        z0: &AugmentedState,
        n_sample: usize,
        dt: f64,
        seed: u64,
    ) -> Result<Estimate> {
        if n_sample == 0 {
            return Err(Error::Config("need at least one sample".into()));
        }
        let steps = horizon_steps(z0.horizon, dt);
        let paths: Vec<Result<(f64, GirsanovWeight, bool)>> = (0..n_sample as u64)
            .into_par_iter()
            .map(|i| self.path(target, sampling, z0, steps, dt, rng::split(seed, i)))
            .collect();
        let mut terms = Vec::with_capacity(n_sample);
        let mut weights = Vec::with_capacity(n_sample);
        let mut diverged = 0;
        for (i, p) in paths.into_iter().enumerate() {
            let (s, w, d) = p?;
            if w.log_w > self.cfg.log_weight_cap {
                return Err(Error::WeightOverflow {
                    log_w: w.log_w,
                    cap: self.cfg.log_weight_cap,
                    sample: i,
                });
            }
            diverged += d as usize;
            weights.push(w.weight());
            terms.push(s * w.weight());
        }
        let (raw, stderr) = mean_stderr(&terms);
        let clamped = !(0.0..=1.0).contains(&raw);
        if clamped {
            log::warn!("importance-sampling estimate {raw} clamped into [0, 1]");
        }
        let sw: f64 = weights.iter().sum();
        let sw2: f64 = weights.iter().map(|w| w * w).sum();
        Ok(Estimate {
            estimate: raw.clamp(0.0, 1.0),
            stderr,
            samples: n_sample,
            diverged,
            clamped,
            effective_samples: Some(sw * sw / sw2),
        })
    }

    /// Per-path log-weights, for diagnostics.
    pub fn log_weights(
        &self,
        target: &dyn Policy,
        sampling: &dyn Policy,
        z0: &AugmentedState,
        n_sample: usize,
        dt: f64,
        seed: u64,
    ) -> Result<Vec<GirsanovWeight>> {
        let steps = horizon_steps(z0.horizon, dt);
        (0..n_sample as u64)
            .map(|i| {
                self.path(target, sampling, z0, steps, dt, rng::split(seed, i))
                    .map(|p| p.1)
            })
            .collect()
    }
}

/// Convenience wrapper around [`ImportanceSampler`] with default settings.
#[allow(clippy::too_many_arguments)]
pub fn is_probability(
    sys: &SdeSystem,
    spec: &BarrierSpec,
    target: &dyn Policy,
    sampling: &dyn Policy,
    z0: &AugmentedState,
    n_sample: usize,
    dt: f64,
    seed: u64,
) -> Result<Estimate> {
    ImportanceSampler::new(sys, spec, ImportanceConfig::default())?
        .estimate(target, sampling, z0, n_sample, dt, seed)
}
