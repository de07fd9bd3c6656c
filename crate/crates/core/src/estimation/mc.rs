//! Plain Monte Carlo estimates of invariance and reach probabilities, and
//! grid tabulation of those estimates.

use nalgebra::DVector;
use rayon::prelude::*;

use super::field::{Axis, Coord, Provenance, SafeProbField};
use super::interp::InterpOrder;
use crate::error::{Error, Result};
use crate::rng;
use crate::sde::{
    em_step, AugmentedState, BarrierSpec, NoiseSource, Policy, SafetyType, SdeSystem, State,
};
use crate::stats::mean_stderr;

/// A probability estimate with its Monte Carlo error.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
    /// Paths that produced non-finite states; counted as unsafe.
    pub diverged: usize,
    /// Whether the raw estimate fell outside `[0, 1]` and was clamped.
    pub clamped: bool,
    /// Effective sample size of the importance weights, when reweighted.
    pub effective_samples: Option<f64>,
}

pub(crate) fn horizon_steps(horizon: f64, dt: f64) -> usize {
    (horizon / dt).round().max(0.0) as usize
}

/// Outcome of one path: the first step at which the state is in the safe set
/// (`reach`) or outside it (invariance), if that happens within `max_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FirstEvent {
    pub step: Option<usize>,
    pub diverged: bool,
}

/// Simulates one path from `x0` and reports the first event step. States are
/// checked at steps `0..=max_steps`, including the initial state.
#[allow(clippy::too_many_arguments)]
pub fn first_event(
    sys: &SdeSystem,
    spec: &BarrierSpec,
    policy: &dyn Policy,
    x0: &State,
    level: f64,
    reach: bool,
    max_steps: usize,
    dt: f64,
    seed: u64,
) -> FirstEvent {
    let hit = |x: &State| spec.contains(x, level) == reach;
    if hit(x0) {
        return FirstEvent {
            step: Some(0),
            diverged: false,
        };
    }
    let mut noise = NoiseSource::new(seed, dt, sys.noise_dim());
    let mut x = x0.clone();
    for k in 0..max_steps {
        let u = policy.act(k as f64 * dt, &x);
        let dw = noise.next_increment();
        match em_step(sys, &x, &u, dt, &dw) {
            Ok(next) => x = next,
            Err(_) => {
                log::warn!("path with seed {seed} diverged at step {k}");
                // A diverged path never re-enters; for invariance it is unsafe.
                return FirstEvent {
                    step: if reach { None } else { Some(k + 1) },
                    diverged: true,
                };
            }
        }
        if hit(&x) {
            return FirstEvent {
                step: Some(k + 1),
                diverged: false,
            };
        }
    }
    FirstEvent {
        step: None,
        diverged: false,
    }
}

fn indicator(event: &FirstEvent, reach: bool, steps: usize) -> f64 {
    let happened = matches!(event.step, Some(k) if k <= steps);
    if happened == reach {
        1.0
    } else {
        0.0
    }
}

fn check_direct_type(spec: &BarrierSpec) -> Result<bool> {
    match spec.safety_type {
        SafetyType::Invariance => Ok(false),
        SafetyType::Reach => Ok(true),
        other => Err(Error::Config(format!(
            "sampling estimators handle types 1 and 3, not {}",
            other.code()
        ))),
    }
}

/// Fraction of `n_sample` closed-loop paths under `nominal` that stay in
/// (type 1) or enter (type 3) `C(L)` within the outlook horizon of `z0`.
pub fn mc_probability(
    sys: &SdeSystem,
    spec: &BarrierSpec,
    nominal: &dyn Policy,
    z0: &AugmentedState,
    n_sample: usize,
    dt: f64,
    seed: u64,
) -> Result<Estimate> {
    let reach = check_direct_type(spec)?;
    if n_sample == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    let steps = horizon_steps(z0.horizon, dt);
    let events: Vec<FirstEvent> = (0..n_sample as u64)
        .into_par_iter()
        .map(|i| {
            first_event(
                sys,
                spec,
                nominal,
                &z0.x,
                z0.margin,
                reach,
                steps,
                dt,
                rng::split(seed, i),
            )
        })
        .collect();
    let s: Vec<f64> = events.iter().map(|e| indicator(e, reach, steps)).collect();
    let (estimate, stderr) = mean_stderr(&s);
    Ok(Estimate {
        estimate,
        stderr,
        samples: n_sample,
        diverged: events.iter().filter(|e| e.diverged).count(),
        clamped: false,
        effective_samples: None,
    })
}

/// Grid and sampling settings for a Monte Carlo field.
#[derive(Debug, Clone)]
pub struct TabulateConfig {
    /// One axis per state component, in component order.
    pub state_axes: Vec<Vec<f64>>,
    /// Outlook horizons to tabulate; `None` tabulates only `spec.horizon`.
    pub horizons: Option<Vec<f64>>,
    /// Margin levels to tabulate; `None` uses `spec.ell0` only.
    pub margins: Option<Vec<f64>>,
    pub samples: usize,
    pub dt: f64,
    pub seed: u64,
    pub order: InterpOrder,
}

/// Builds a field by evaluating `estimator` at every grid node. The
/// estimator receives node coordinates in axis order and returns
/// `(value, stderr)`.
pub fn tabulate_field(
    axes: Vec<Axis>,
    order: InterpOrder,
    state_dim: usize,
    provenance: Provenance,
    estimator: impl Fn(&[f64]) -> Result<(f64, f64)> + Sync,
) -> Result<SafeProbField> {
    let size: usize = axes.iter().map(|a| a.nodes.len()).product();
    let probe = SafeProbField::new(
        axes.clone(),
        vec![0.0; size],
        vec![0.0; size],
        order,
        state_dim,
        provenance.clone(),
    )?;
    let results: Vec<Result<(f64, f64)>> = (0..size)
        .into_par_iter()
        .map(|flat| {
            let c = probe.node(flat);
            estimator(&c).map_err(|e| Error::AtNode {
                coords: c,
                source: Box::new(e),
            })
        })
        .collect();
    let mut values = Vec::with_capacity(size);
    let mut errs = Vec::with_capacity(size);
    for r in results {
        let (v, e) = r?;
        values.push(v);
        errs.push(e);
    }
    SafeProbField::new(axes, values, errs, order, state_dim, provenance)
}

/// Monte Carlo field of type-1 or type-3 probabilities under `policy`.
///
/// Every node reuses the same per-path seeds (common random numbers), which
/// keeps the field smooth across nodes. Each path is simulated once up to the
/// longest tabulated horizon and its first event step answers every horizon.
pub fn tabulate_mc(
    sys: &SdeSystem,
    spec: &BarrierSpec,
    policy: &dyn Policy,
    cfg: &TabulateConfig,
    policy_note: &str,
) -> Result<SafeProbField> {
    let reach = check_direct_type(spec)?;
    let n = sys.state_dim();
    if cfg.state_axes.len() != n {
        return Err(Error::Dimension {
            what: "state axes",
            expected: n.to_string(),
            got: cfg.state_axes.len().to_string(),
        });
    }
    if cfg.samples == 0 {
        return Err(Error::Config("need at least one sample per node".into()));
    }
    let horizons = cfg.horizons.clone().unwrap_or_else(|| vec![spec.horizon]);
    let margins = cfg.margins.clone().unwrap_or_else(|| vec![spec.ell0]);
    let max_steps = horizons
        .iter()
        .map(|&h| horizon_steps(h, cfg.dt))
        .max()
        .unwrap_or(0);

    let mut axes = Vec::new();
    if cfg.horizons.is_some() {
        axes.push(Axis::new(Coord::Horizon, horizons.clone()));
    }
    if cfg.margins.is_some() {
        axes.push(Axis::new(Coord::Margin, margins.clone()));
    }
    for (i, nodes) in cfg.state_axes.iter().enumerate() {
        axes.push(Axis::new(Coord::State(i), nodes.clone()));
    }

    // Simulate once per (margin, state) node.
    let mut spatial: Vec<(f64, State)> = Vec::new();
    let mut idx = vec![0usize; n];
    let count: usize = cfg.state_axes.iter().map(|a| a.len()).product();
    for &l in &margins {
        for flat in 0..count {
            let mut rest = flat;
            for i in (0..n).rev() {
                idx[i] = rest % cfg.state_axes[i].len();
                rest /= cfg.state_axes[i].len();
            }
            let x = DVector::from_fn(n, |i, _| cfg.state_axes[i][idx[i]]);
            spatial.push((l, x));
        }
    }
    let samples = cfg.samples;
    let curves: Vec<(Vec<f64>, Vec<f64>)> = spatial
        .par_iter()
        .map(|(l, x)| {
            let events: Vec<FirstEvent> = (0..samples as u64)
                .map(|i| {
                    first_event(
                        sys,
                        spec,
                        policy,
                        x,
                        *l,
                        reach,
                        max_steps,
                        cfg.dt,
                        rng::split(cfg.seed, i),
                    )
                })
                .collect();
            horizons
                .iter()
                .map(|&h| {
                    let steps = horizon_steps(h, cfg.dt);
                    let s: Vec<f64> = events.iter().map(|e| indicator(e, reach, steps)).collect();
                    mean_stderr(&s)
                })
                .unzip()
        })
        .collect();

    // Assemble in (horizon, margin, state) order.
    let mut values = Vec::with_capacity(horizons.len() * spatial.len());
    let mut errs = Vec::with_capacity(values.capacity());
    for t in 0..horizons.len() {
        for c in &curves {
            values.push(c.0[t]);
            errs.push(c.1[t]);
        }
    }
    let provenance = Provenance {
        algorithm: "monte-carlo".into(),
        samples,
        seed: cfg.seed,
        safety_type: spec.safety_type.code(),
        note: policy_note.into(),
    };
    SafeProbField::new(axes, values, errs, cfg.order, n, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{HorizonMode, ZeroPolicy};
    use statrs::distribution::{ContinuousCDF, Normal};

    fn v(x: f64) -> State {
        DVector::from_element(1, x)
    }

    fn z0(x: f64, horizon: f64, spec: &BarrierSpec) -> AugmentedState {
        AugmentedState::new(horizon, 0.0, v(x), spec)
    }

    /// Probability that `a + μt + σW_t` stays above zero on `[0, T]`.
    fn abm_survival(a: f64, mu: f64, sigma: f64, t: f64) -> f64 {
        let n = Normal::standard();
        let s = sigma * t.sqrt();
        n.cdf((a + mu * t) / s) - (-2.0 * mu * a / (sigma * sigma)).exp() * n.cdf((-a + mu * t) / s)
    }

    #[test]
    fn deterministic_safe_path() {
        let sys = SdeSystem::scalar(|_| 0.0, |_| 1.0, |_| 0.0);
        let spec = BarrierSpec::scalar_threshold(1.0);
        let e = mc_probability(
            &sys,
            &spec,
            &ZeroPolicy(1),
            &z0(3.0, 10.0, &spec),
            50,
            0.1,
            1,
        )
        .unwrap();
        assert_eq!((e.estimate, e.stderr), (1.0, 0.0));
    }

    #[test]
    fn unsafe_start_is_zero() {
        let sys = SdeSystem::scalar(|_| 2.0, |_| 1.0, |_| 2.0);
        let spec = BarrierSpec::scalar_threshold(1.0);
        let e = mc_probability(
            &sys,
            &spec,
            &ZeroPolicy(1),
            &z0(0.5, 10.0, &spec),
            100,
            0.1,
            1,
        )
        .unwrap();
        assert_eq!(e.estimate, 0.0);
    }

    #[test]
    fn rejects_dp_types() {
        let sys = SdeSystem::scalar(|_| 2.0, |_| 1.0, |_| 2.0);
        let spec = BarrierSpec::scalar_threshold(1.0).with_type(SafetyType::MaxInvariance);
        assert!(mc_probability(
            &sys,
            &spec,
            &ZeroPolicy(1),
            &z0(2.0, 1.0, &spec),
            10,
            0.1,
            1
        )
        .is_err());
    }

    #[test]
    fn reach_probability_of_drifting_path() {
        // dx = dt from 0 reaches φ = x - 1 ≥ 0 after one time unit.
        let sys = SdeSystem::scalar(|_| 1.0, |_| 1.0, |_| 0.0);
        let spec = BarrierSpec::scalar_threshold(1.0).with_type(SafetyType::Reach);
        let yes =
            mc_probability(&sys, &spec, &ZeroPolicy(1), &z0(0.0, 1.5, &spec), 5, 0.1, 1).unwrap();
        let no =
            mc_probability(&sys, &spec, &ZeroPolicy(1), &z0(0.0, 0.5, &spec), 5, 0.1, 1).unwrap();
        assert_eq!((yes.estimate, no.estimate), (1.0, 0.0));
    }

    #[test]
    fn brownian_first_passage_oracle() {
        let sys = SdeSystem::scalar(|_| 2.0, |_| 1.0, |_| 2.0);
        let spec = BarrierSpec::scalar_threshold(1.0).with_horizon(HorizonMode::Fixed, 1.0);
        let dt = 1e-3;
        let e = mc_probability(
            &sys,
            &spec,
            &ZeroPolicy(1),
            &z0(3.0, 1.0, &spec),
            100_000,
            dt,
            42,
        )
        .unwrap();
        // Φ(2) − e⁻²·Φ(0)
        assert!((abm_survival(2.0, 2.0, 2.0, 1.0) - 0.909582226).abs() < 1e-8);
        // The barrier is only checked on the time grid; the Broadie–Glasserman–Kou
        // correction shifts the continuous-time barrier by ζ(1/2)/√(2π)·σ√dt.
        let shift = 0.5826 * 2.0 * dt.sqrt();
        let exact = abm_survival(2.0 + shift, 2.0, 2.0, 1.0);
        assert!(
            (e.estimate - exact).abs() < 3.0 * e.stderr,
            "{} vs {exact}",
            e.estimate
        );
    }

    #[test]
    fn constant_estimator_gives_constant_field() {
        let f = tabulate_field(
            vec![Axis::stepped(Coord::State(0), 0.0, 2.0, 0.5)],
            InterpOrder::Cubic,
            1,
            Provenance::default(),
            |_| Ok((1.0, 0.0)),
        )
        .unwrap();
        let spec = BarrierSpec::scalar_threshold(1.0);
        for x in [0.0, 0.3, 1.7, 2.0] {
            assert_eq!(f.query(&z0(x, 10.0, &spec)).unwrap().value, 1.0);
        }
    }

    #[test]
    fn estimator_errors_carry_node_coordinates() {
        let err = tabulate_field(
            vec![Axis::stepped(Coord::State(0), 0.0, 1.0, 0.5)],
            InterpOrder::Linear,
            1,
            Provenance::default(),
            |c| {
                if c[0] > 0.7 {
                    Err(Error::Config("boom".into()))
                } else {
                    Ok((0.5, 0.0))
                }
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::AtNode { ref coords, .. } if coords == &vec![1.0]));
    }

    #[test]
    fn system_one_field_is_increasing() {
        let sys = SdeSystem::scalar(|_| 2.0, |_| 1.0, |_| 2.0);
        let spec = BarrierSpec::scalar_threshold(1.0);
        let nominal = |x: &State| -2.5 * x;
        let nodes: Vec<f64> = (0..=104).map(|k| 0.8 + 0.05 * k as f64).collect();
        let index: Vec<f64> = (0..nodes.len()).map(|k| k as f64).collect();
        for horizon in [10.0, 1.0] {
            let cfg = TabulateConfig {
                state_axes: vec![nodes.clone()],
                horizons: Some(vec![horizon]),
                margins: None,
                samples: 10_000,
                dt: 0.1,
                seed: 9,
                order: InterpOrder::Cubic,
            };
            let f = tabulate_mc(&sys, &spec, &nominal, &cfg, "proportional -2.5").unwrap();
            let vals = f.values();
            // The Euler map x -> 0.75x + 0.2 + 2dW is increasing, so shared
            // noise makes every path indicator monotone in the start state.
            assert!(vals.windows(2).all(|w| w[1] >= w[0]));
            if vals.iter().any(|&p| p > 0.0) {
                assert!(
                    crate::stats::spearman(&index, vals) > 0.99,
                    "horizon {horizon}"
                );
            }
        }
        let free_cfg = TabulateConfig {
            state_axes: vec![(0..=30).map(|k| 0.9 + 0.05 * k as f64).collect()],
            horizons: None,
            margins: None,
            samples: 10_000,
            dt: 0.1,
            seed: 9,
            order: InterpOrder::Cubic,
        };
        let free = tabulate_mc(&sys, &spec, &ZeroPolicy(1), &free_cfg, "zero").unwrap();
        let e = free.query(&z0(1.02, 10.0, &spec)).unwrap();
        assert!(e.grad[3] > 0.0);
    }

    #[test]
    fn boundary_node_is_at_most_one_half() {
        // Starting exactly on the boundary with fine steps, the path leaves
        // almost surely; the coarse grid keeps it well below one half.
        let sys = SdeSystem::scalar(|_| 2.0, |_| 1.0, |_| 2.0);
        let spec = BarrierSpec::scalar_threshold(1.0);
        let fine = mc_probability(
            &sys,
            &spec,
            &ZeroPolicy(1),
            &z0(1.0, 10.0, &spec),
            4000,
            1e-3,
            5,
        )
        .unwrap();
        let coarse = mc_probability(
            &sys,
            &spec,
            &ZeroPolicy(1),
            &z0(1.0, 10.0, &spec),
            10_000,
            0.1,
            5,
        )
        .unwrap();
        assert!(fine.estimate <= 0.5 + 3.0 * fine.stderr);
        assert!(coarse.estimate <= 0.5 + 3.0 * coarse.stderr);
    }

    #[test]
    fn horizon_axis_is_monotone() {
        let sys = SdeSystem::scalar(|_| 2.0, |_| 1.0, |_| 2.0);
        let spec = BarrierSpec::scalar_threshold(1.0);
        let cfg = TabulateConfig {
            state_axes: vec![vec![1.5, 2.0, 3.0, 4.0]],
            horizons: Some(vec![0.0, 1.0, 2.0, 4.0, 8.0]),
            margins: None,
            samples: 2000,
            dt: 0.1,
            seed: 3,
            order: InterpOrder::Cubic,
        };
        let f = tabulate_mc(&sys, &spec, &ZeroPolicy(1), &cfg, "zero").unwrap();
        // Shared paths make the survival curve exactly non-increasing.
        assert_eq!(f.horizon_monotone(false, 0.0), Some(true));
        assert_eq!(f.query(&z0(3.0, 0.0, &spec)).unwrap().value, 1.0);
    }
}
