//! Scenario files, closed-loop drivers, CSV output and acceptance checks for
//! the probabilistic safety certificate and its comparison baselines.

pub mod acceptance;
pub mod error;
pub mod expr;
pub mod output;
pub mod rl_runs;
pub mod runner;
pub mod scenario;

pub use error::{ExperimentError, Result};
pub use runner::{build_field, run, Controller, Mode, RunSeries, StepRow};
pub use scenario::{Compiled, NnNominal, Nominal, NominalSpec, Scenario};

/// Scenario files shipped with the crate, by name.
pub const BUILTIN_SCENARIOS: [(&str, &str); 3] = [
    ("system1", acceptance::SYSTEM1),
    ("system2", acceptance::SYSTEM2),
    ("nn", acceptance::NN),
];
