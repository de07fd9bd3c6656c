//! Approximate reach/avoid dynamic programming: each backward step fits a
//! non-negative combination of Gaussian kernels that dominates the Bellman
//! backup at sampled states while minimising its integral over the domain.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::simplex::{self, LinearProgram, Relation, SimplexOptions};
use super::transition::TransitionModel;
use crate::error::{Error, Result};
use crate::rng;
use crate::sde::{BarrierSpec, SafetyType, State};

/// Normalised Gaussian `ψ(x; c, ν)` with per-axis variances `ν`.
pub fn gaussian_kernel(x: &[f64], center: &[f64], variance: &[f64]) -> f64 {
    let mut log = 0.0;
    for ((xi, ci), vi) in x.iter().zip(center).zip(variance) {
        let d = xi - ci;
        log -= 0.5 * (d * d / vi + (2.0 * std::f64::consts::PI * vi).ln());
    }
    log.exp()
}

/// `∫ ψ(x; c, ν) dx` over the box `[lower, upper]`.
pub fn kernel_box_integral(center: &[f64], variance: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let n = Normal::standard();
    center
        .iter()
        .zip(variance)
        .zip(lower.iter().zip(upper))
        .map(|((c, v), (lo, hi))| {
            let s = v.sqrt();
            n.cdf((hi - c) / s) - n.cdf((lo - c) / s)
        })
        .product()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    pub centers: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl KernelModel {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn basis(&self, x: &[f64]) -> Vec<f64> {
        self.centers
            .iter()
            .zip(&self.variances)
            .map(|(c, v)| gaussian_kernel(x, c, v))
            .collect()
    }

    /// Unclamped kernel sum.
    pub fn raw(&self, x: &[f64]) -> f64 {
        self.basis(x)
            .iter()
            .zip(&self.weights)
            .map(|(b, w)| b * w)
            .sum()
    }
}

/// Kernel variance law: log-uniform on this range times the squared box width.
pub const DEFAULT_VARIANCE_RANGE: (f64, f64) = (0.01, 1.0);

#[derive(Debug, Clone)]
pub struct DpConfig {
    pub kernels: usize,
    pub samples: usize,
    pub steps: usize,
    pub candidates: Vec<DVector<f64>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Draw states from the integer lattice inside the box.
    pub lattice: bool,
    /// Kernel variances are log-uniform on this range times the squared box
    /// width along each axis.
    pub variance_range: (f64, f64),
    pub seed: u64,
    pub simplex: SimplexOptions,
}

impl DpConfig {
    pub fn new(
        lower: Vec<f64>,
        upper: Vec<f64>,
        steps: usize,
        candidates: Vec<DVector<f64>>,
    ) -> Self {
        Self {
            kernels: 100,
            samples: 1000,
            steps,
            candidates,
            lower,
            upper,
            lattice: false,
            variance_range: DEFAULT_VARIANCE_RANGE,
            seed: 0,
            simplex: SimplexOptions::default(),
        }
    }

    /// `count` evenly spaced scalar controls on `[lo, hi]`.
    pub fn scalar_candidates(lo: f64, hi: f64, count: usize) -> Vec<DVector<f64>> {
        if count == 1 {
            return vec![DVector::from_element(1, 0.5 * (lo + hi))];
        }
        (0..count)
            .map(|i| DVector::from_element(1, lo + (hi - lo) * i as f64 / (count - 1) as f64))
            .collect()
    }
}

/// Backward-recursion output: `models[k]` approximates the value with
/// `steps − k` steps to go.
#[derive(Debug, Clone)]
pub struct DpResult {
    spec: BarrierSpec,
    candidates: Vec<DVector<f64>>,
    pub models: Vec<KernelModel>,
    pub lp_iterations: Vec<usize>,
    /// Largest LP constraint violation per step.
    pub max_violation: Vec<f64>,
    pub fit_states: Vec<Vec<f64>>,
}

impl DpResult {
    pub fn steps(&self) -> usize {
        self.models.len()
    }

    fn reach(&self) -> bool {
        self.spec.safety_type.is_reach()
    }

    /// Value estimate at step `k` (0 ≤ k ≤ steps), clamped to `[0, 1]`.
    pub fn value(&self, k: usize, x: &State) -> f64 {
        let inside = self.spec.contains(x, self.spec.ell0);
        match (self.reach(), inside) {
            (false, false) => 0.0,
            (true, true) => 1.0,
            _ if k >= self.steps() => inside as u8 as f64,
            _ => self.models[k].raw(x.as_slice()).clamp(0.0, 1.0),
        }
    }

    fn backup(&self, model: &dyn TransitionModel, k: usize, x: &State) -> Result<(usize, f64)> {
        best_candidate(model, &self.candidates, x, &|y| self.value(k + 1, y))
    }

    /// Candidate maximising the one-step backup at step `k < steps`.
    pub fn greedy_action(
        &self,
        model: &dyn TransitionModel,
        k: usize,
        x: &State,
    ) -> Result<DVector<f64>> {
        if k >= self.steps() {
            return Err(Error::Config(format!(
                "step {k} has no action (horizon {})",
                self.steps()
            )));
        }
        let (i, _) = self.backup(model, k, x)?;
        Ok(self.candidates[i].clone())
    }
}

fn best_candidate(
    model: &dyn TransitionModel,
    candidates: &[DVector<f64>],
    x: &State,
    next: &dyn Fn(&State) -> f64,
) -> Result<(usize, f64)> {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, u) in candidates.iter().enumerate() {
        let e = model.expectation(x, u, next)?;
        if e > best.1 + 1e-12 {
            best = (i, e);
        }
    }
    Ok(best)
}

fn draw_point(r: &mut rng::SimRng, cfg: &DpConfig, lattice: bool) -> Vec<f64> {
    cfg.lower
        .iter()
        .zip(&cfg.upper)
        .map(|(&lo, &hi)| {
            if lattice {
                r.random_range(lo.ceil() as i64..=hi.floor() as i64) as f64
            } else {
                r.random_range(lo..=hi)
            }
        })
        .collect()
}

/// Draws `count` points from the part of the box where `keep` holds.
fn draw_in_region(
    r: &mut rng::SimRng,
    cfg: &DpConfig,
    count: usize,
    lattice: bool,
    keep: &dyn Fn(&State) -> bool,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(count);
    let mut tries = 0usize;
    while out.len() < count {
        tries += 1;
        if tries > 1000 * count.max(1) {
            return Err(Error::Config(
                "fit region has negligible volume inside the box".into(),
            ));
        }
        let p = draw_point(r, cfg, lattice);
        if keep(&DVector::from_column_slice(&p)) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Kernel-LP approximation of the type-2 (maximal invariance) or type-4
/// (maximal reach) probability over `cfg.steps` discrete steps.
pub fn dp_reach_avoid(
    model: &dyn TransitionModel,
    spec: &BarrierSpec,
    cfg: &DpConfig,
) -> Result<DpResult> {
    let reach = match spec.safety_type {
        SafetyType::MaxInvariance => false,
        SafetyType::MaxReach => true,
        other => {
            return Err(Error::Config(format!(
                "dynamic programming estimates types 2 and 4, got {}",
                other.code()
            )))
        }
    };
    let dim = model.state_dim();
    if cfg.lower.len() != dim || cfg.upper.len() != dim {
        return Err(Error::Dimension {
            what: "dp box",
            expected: dim.to_string(),
            got: cfg.lower.len().to_string(),
        });
    }
    if cfg.candidates.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    if cfg.steps == 0 {
        return Err(Error::Config("dp needs at least one step".into()));
    }
    let level = spec.ell0;
    // Avoid values vanish outside C and reach values are 1 inside it, so the
    // kernels only need to represent the complementary region.
    let fit_region = |x: &State| spec.contains(x, level) != reach;

    let mut r = rng::rng(rng::purpose(cfg.seed, "dp-kernels"));
    let centers = draw_in_region(&mut r, cfg, cfg.kernels, false, &fit_region)?;
    let (vlo, vhi) = cfg.variance_range;
    let variances: Vec<Vec<f64>> = (0..cfg.kernels)
        .map(|_| {
            cfg.lower
                .iter()
                .zip(&cfg.upper)
                .map(|(lo, hi)| {
                    let w = (hi - lo).powi(2);
                    (r.random_range(vlo.ln()..=vhi.ln())).exp() * w
                })
                .collect()
        })
        .collect();
    let integrals: Vec<f64> = centers
        .iter()
        .zip(&variances)
        .map(|(c, v)| kernel_box_integral(c, v, &cfg.lower, &cfg.upper))
        .collect();

    let mut r = rng::rng(rng::purpose(cfg.seed, "dp-samples"));
    let mut states = draw_in_region(&mut r, cfg, cfg.samples, cfg.lattice, &fit_region)?;
    states.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    states.dedup();
    let basis: Vec<Vec<f64>> = states
        .iter()
        .map(|s| {
            centers
                .iter()
                .zip(&variances)
                .map(|(c, v)| gaussian_kernel(s, c, v))
                .collect()
        })
        .collect();

    let mut result = DpResult {
        spec: spec.clone(),
        candidates: cfg.candidates.clone(),
        models: vec![
            KernelModel {
                centers: centers.clone(),
                variances: variances.clone(),
                weights: vec![0.0; cfg.kernels],
            };
            cfg.steps
        ],
        lp_iterations: vec![0; cfg.steps],
        max_violation: vec![0.0; cfg.steps],
        fit_states: states.clone(),
    };

    for k in (0..cfg.steps).rev() {
        let mut lp = LinearProgram::new(integrals.clone());
        for (s, row) in states.iter().zip(&basis) {
            let x = DVector::from_column_slice(s);
            let (_, target) = result.backup(model, k, &x)?;
            if target > 0.0 {
                lp.add(row.clone(), Relation::Ge, target);
            }
        }
        let sol = simplex::solve(&lp, &cfg.simplex).map_err(|e| e.at_step(k))?;
        result.max_violation[k] = lp.max_violation(&sol.x);
        result.lp_iterations[k] = sol.iterations;
        result.models[k].weights = sol.x;
        log::debug!(
            "dp step {k}: {} constraints, {} pivots, violation {:.2e}",
            lp.constraints.len(),
            sol.iterations,
            result.max_violation[k]
        );
    }
    Ok(result)
}
