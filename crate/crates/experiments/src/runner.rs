//! Closed-loop drivers: the worst-case setting, where every controller
//! applies the input that meets its own condition with equality, and the
//! switching setting, where a nominal controller is filtered.

use nalgebra::DVector;
use psafe_core::baselines::{baseline_filter, baseline_worst_case, Baseline};
use psafe_core::certificate::Certificate;
use psafe_core::estimation::{
    tabulate_mc, Axis, ClampedField, Coord, ProbabilityField, SafeProbField, TabulateConfig,
};
use psafe_core::rng;
use psafe_core::sde::{augment, em_step, NoiseSource, Policy, State};
use psafe_core::Error as CoreError;
use rayon::prelude::*;

use crate::error::{ExperimentError, Result};
use crate::scenario::{Compiled, FilterKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Controller {
    Proposed,
    Stocbf,
    Prsbc,
    Cvar,
    /// The unfiltered nominal controller.
    Nominal,
}

impl Controller {
    /// The proposed controller and the three baselines.
    pub const COMPARED: [Controller; 4] = [
        Controller::Proposed,
        Controller::Stocbf,
        Controller::Prsbc,
        Controller::Cvar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Controller::Proposed => "proposed",
            Controller::Stocbf => "stocbf",
            Controller::Prsbc => "prsbc",
            Controller::Cvar => "cvar",
            Controller::Nominal => "nominal",
        }
    }

    fn baseline(self) -> Option<Baseline> {
        match self {
            Controller::Stocbf => Some(Baseline::Stocbf),
            Controller::Prsbc => Some(Baseline::Prsbc),
            Controller::Cvar => Some(Baseline::Cvar),
            _ => None,
        }
    }
}

impl std::str::FromStr for Controller {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        [Controller::Nominal]
            .into_iter()
            .chain(Controller::COMPARED)
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                ExperimentError::Scenario(format!(
                    "unknown controller `{s}` (expected proposed, stocbf, prsbc, cvar or nominal)"
                ))
            })
    }
}

impl std::fmt::Display for Controller {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    WorstCase,
    Switching,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::WorstCase => "worst-case",
            Mode::Switching => "switching",
        }
    }
}

/// Tabulates the safe-probability field of the scenario under its field
/// policy, over the state grid and the horizon grid.
pub fn build_field(c: &Compiled, seed: u64) -> Result<SafeProbField> {
    let e = &c.scenario.estimation;
    let cfg = TabulateConfig {
        state_axes: vec![Axis::stepped(Coord::State(0), e.x_min, e.x_max, e.x_step).nodes],
        horizons: Some(
            Axis::stepped(Coord::Horizon, e.horizon_min, e.horizon_max, e.horizon_step).nodes,
        ),
        margins: None,
        samples: e.samples,
        dt: c.scenario.run.dt,
        seed: rng::purpose(seed, "field"),
        order: e.order,
    };
    let note = format!("{:?}", c.scenario.field_policy);
    Ok(tabulate_mc(
        &c.system,
        &c.barrier,
        &c.field_policy,
        &cfg,
        &note,
    )?)
}

/// Cross-trajectory statistics at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub t: f64,
    pub mean_x: f64,
    pub std_x: f64,
    /// Mean of the field value `F` over trajectories.
    pub expected_f: f64,
    /// Fraction of trajectories that have never left `C(0)`.
    pub safe_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSeries {
    pub controller: Controller,
    pub mode: Mode,
    pub trajectories: usize,
    pub rows: Vec<StepRow>,
    /// Steps where a filter had no feasible input, over all trajectories.
    pub infeasible_steps: usize,
    /// Steps where the controller had no input authority and fell back to
    /// the reference input.
    pub degenerate_steps: usize,
}

impl RunSeries {
    pub fn final_row(&self) -> Option<&StepRow> {
        self.rows.last()
    }
}

struct Path {
    x: Vec<f64>,
    f: Vec<f64>,
    safe: Vec<bool>,
    infeasible: usize,
    degenerate: usize,
}

/// Simulates `n_traj` closed-loop trajectories. Trajectory `i` uses the
/// same Brownian increments under every controller.
pub fn run(
    c: &Compiled,
    field: &SafeProbField,
    controller: Controller,
    mode: Mode,
    n_traj: usize,
    seed: u64,
) -> Result<RunSeries> {
    let lookup = ClampedField(field);
    let cert = Certificate::new(&lookup, &c.system, &c.barrier, c.certificate.clone())?
        .with_reference(&c.field_policy);
    let steps = c.scenario.run.steps();
    let paths: Vec<Result<Path>> = (0..n_traj)
        .into_par_iter()
        .map(|i| simulate_path(c, &lookup, &cert, controller, mode, i, steps, seed))
        .collect();
    let paths = paths.into_iter().collect::<Result<Vec<_>>>()?;
    let dt = c.scenario.run.dt;
    let rows = if paths.is_empty() {
        Vec::new()
    } else {
        (0..=steps)
            .map(|k| {
                let xs: Vec<f64> = paths.iter().map(|p| p.x[k]).collect();
                let n = xs.len() as f64;
                let mean_x = xs.iter().sum::<f64>() / n;
                let var = if xs.len() > 1 {
                    xs.iter().map(|x| (x - mean_x).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                StepRow {
                    step: k,
                    t: k as f64 * dt,
                    mean_x,
                    std_x: var.sqrt(),
                    expected_f: paths.iter().map(|p| p.f[k]).sum::<f64>() / n,
                    safe_fraction: paths.iter().filter(|p| p.safe[k]).count() as f64 / n,
                }
            })
            .collect()
    };
    Ok(RunSeries {
        controller,
        mode,
        trajectories: n_traj,
        rows,
        infeasible_steps: paths.iter().map(|p| p.infeasible).sum(),
        degenerate_steps: paths.iter().map(|p| p.degenerate).sum(),
    })
}

#[allow(clippy::too_many_arguments)]
fn simulate_path(
    c: &Compiled,
    lookup: &ClampedField<'_>,
    cert: &Certificate<'_>,
    controller: Controller,
    mode: Mode,
    traj: usize,
    steps: usize,
    seed: u64,
) -> Result<Path> {
    let run = &c.scenario.run;
    let dt = run.dt;
    let at = |step: usize| {
        move |source: CoreError| ExperimentError::AtStep {
            trajectory: traj,
            step,
            source,
        }
    };
    let mut noise = NoiseSource::new(
        rng::split(rng::purpose(seed, "paths"), traj as u64),
        dt,
        c.system.noise_dim(),
    );
    let cvar_stream = rng::split(rng::purpose(seed, "cvar"), traj as u64);
    let mut x: State = DVector::from_element(1, run.x0);
    let mut p = Path {
        x: Vec::with_capacity(steps + 1),
        f: Vec::with_capacity(steps + 1),
        safe: Vec::with_capacity(steps + 1),
        infeasible: 0,
        degenerate: 0,
    };
    let mut safe = true;
    for k in 0..=steps {
        let t = k as f64 * dt;
        let z = augment(&x, t, &c.barrier).map_err(at(k))?;
        safe &= c.barrier.contains(&x, 0.0);
        p.x.push(x[0]);
        p.f.push(lookup.evaluate(&z).map_err(at(k))?.value);
        p.safe.push(safe);
        if k == steps {
            break;
        }
        let nominal = c.nominal.act(t, &x);
        let reference = || c.field_policy.act(t, &x);
        let step_seed = rng::split(cvar_stream, k as u64);
        let (sys, barrier, params) = (&c.system, &c.barrier, &c.scenario.baselines);
        let u = match (controller, mode) {
            (Controller::Nominal, _) => nominal,
            (Controller::Proposed, Mode::WorstCase) => match cert.worst_case_control(&z) {
                Ok(u) => u,
                Err(CoreError::DegenerateGradient { .. }) => {
                    p.degenerate += 1;
                    reference()
                }
                Err(e) => return Err(at(k)(e)),
            },
            (Controller::Proposed, Mode::Switching) => {
                let out = match c.scenario.certificate.filter {
                    FilterKind::Additive => cert.additive_filter(&nominal, &z),
                    FilterKind::Qp => cert.qp_filter(&nominal, None, &z),
                }
                .map_err(at(k))?;
                p.infeasible += !out.feasible as usize;
                out.u
            }
            (b, Mode::WorstCase) => {
                let which = b.baseline().expect("baseline controller");
                match baseline_worst_case(which, sys, barrier, params, &x, dt, step_seed) {
                    Ok(u) => u,
                    Err(CoreError::DegenerateGradient { .. }) => {
                        p.degenerate += 1;
                        reference()
                    }
                    Err(CoreError::CvarInfeasible) => {
                        p.infeasible += 1;
                        reference()
                    }
                    Err(e) => return Err(at(k)(e)),
                }
            }
            (b, Mode::Switching) => {
                let which = b.baseline().expect("baseline controller");
                let out = baseline_filter(which, sys, barrier, params, &nominal, &x, dt, step_seed)
                    .map_err(at(k))?;
                p.infeasible += !out.feasible as usize;
                out.u
            }
        };
        x = em_step(&c.system, &x, &u, dt, &noise.next_increment()).map_err(at(k))?;
    }
    Ok(p)
}
