use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite {what} component {index}{}", step_suffix(*step))]
    NumericalDivergence {
        what: &'static str,
        index: usize,
        step: Option<usize>,
    },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error("elapsed time {elapsed} exceeds horizon {horizon}")]
    HorizonExhausted { elapsed: f64, horizon: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("log-weight {log_w} of sample {sample} exceeds cap {cap}")]
    WeightOverflow { log_w: f64, cap: f64, sample: usize },
    #[error("linear program infeasible{}", step.map(|k| format!(" at backward step {k}")).unwrap_or_default())]
    LpInfeasible { step: Option<usize> },
    #[error("linear program unbounded")]
    LpUnbounded,
    #[error("simplex stalled after {iterations} iterations")]
    SolverStall { iterations: usize },
    #[error("query coordinate {value} on axis {axis} outside grid hull; nearest in-hull point {nearest:?}")]
    OutOfHull {
        axis: usize,
        value: f64,
        nearest: Vec<f64>,
    },
    #[error("safety constraint infeasible, exposed risk {exposed_risk}")]
    Infeasible { exposed_risk: f64 },
    #[error("constraint gradient norm {norm} below tolerance")]
    DegenerateGradient { norm: f64 },
    #[error("no candidate control satisfies the constraint")]
    EmptyCandidateSet,
    #[error("no control in the search interval meets the CVaR bound")]
    CvarInfeasible,
    #[error("at grid node {coords:?}: {source}")]
    AtNode {
        coords: Vec<f64>,
        source: Box<Error>,
    },
    #[error("field file: {0}")]
    Format(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn step_suffix(step: Option<usize>) -> String {
    match step {
        Some(k) => format!(" at step {k}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn at_step(self, k: usize) -> Self {
        match self {
            Error::NumericalDivergence { what, index, .. } => Error::NumericalDivergence {
                what,
                index,
                step: Some(k),
            },
            Error::LpInfeasible { .. } => Error::LpInfeasible { step: Some(k) },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
