//! CSV emission. Every file carries the build identifier and master seed;
//! floats are written with 9 significant digits.

use std::fs::File;
use std::path::Path;

use psafe_rl::{Episode, PgResult, QResult};

use crate::acceptance::CriterionResult;
use crate::error::{ExperimentError, Result};
use crate::runner::RunSeries;
use crate::scenario::Scenario;

/// Short commit hash of the source tree the binary was built from.
pub const BUILD_ID: &str = env!("PSAFE_BUILD_ID");

/// `v` rounded to 9 significant digits, printed in its shortest form.
pub fn sig9(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    rounded.to_string()
}

/// Identifies the run a CSV row belongs to.
#[derive(Debug, Clone, Copy)]
pub struct Stamp<'a> {
    pub scenario: &'a str,
    pub master_seed: u64,
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| ExperimentError::io(path, e))
}

fn write_table(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)
        .map_err(|e| ExperimentError::io(path, e))?;
    for row in rows {
        w.write_record(&row)
            .map_err(|e| ExperimentError::io(path, e))?;
    }
    w.flush().map_err(|e| ExperimentError::io(path, e))
}

fn stamp_cols(s: Stamp) -> Vec<String> {
    vec![
        BUILD_ID.to_string(),
        s.master_seed.to_string(),
        s.scenario.to_string(),
    ]
}

pub const SERIES_HEADER: [&str; 11] = [
    "build_id",
    "master_seed",
    "scenario",
    "mode",
    "controller",
    "step",
    "t",
    "mean_x",
    "std_x",
    "expected_f",
    "safe_fraction",
];

/// Per-step state statistics, expected field value and empirical safe
/// fraction of each run, one block of rows per controller.
pub fn write_series(path: &Path, stamp: Stamp, runs: &[RunSeries]) -> Result<()> {
    let rows = runs.iter().flat_map(|r| {
        r.rows.iter().map(move |row| {
            let mut cols = stamp_cols(stamp);
            cols.extend([
                r.mode.name().to_string(),
                r.controller.name().to_string(),
                row.step.to_string(),
                sig9(row.t),
                sig9(row.mean_x),
                sig9(row.std_x),
                sig9(row.expected_f),
                sig9(row.safe_fraction),
            ]);
            cols
        })
    });
    write_table(path, &SERIES_HEADER, rows)
}

pub const SUMMARY_HEADER: [&str; 19] = [
    "build_id",
    "master_seed",
    "scenario",
    "mode",
    "controller",
    "trajectories",
    "final_expected_f",
    "final_safe_fraction",
    "min_expected_f",
    "infeasible_steps",
    "degenerate_steps",
    "alpha",
    "epsilon",
    "horizon",
    "eta",
    "epsilon_prsbc",
    "gamma_cvar",
    "beta_cvar",
    "dt",
];

/// Final safe probabilities per run, with the controller parameters echoed
/// on every row.
pub fn write_summary(
    path: &Path,
    stamp: Stamp,
    scenario: &Scenario,
    runs: &[RunSeries],
) -> Result<()> {
    let (c, b) = (&scenario.certificate, &scenario.baselines);
    let rows = runs.iter().map(|r| {
        let last = r.final_row();
        let min_f = r.rows.iter().map(|x| x.expected_f).fold(f64::NAN, f64::min);
        let mut cols = stamp_cols(stamp);
        cols.extend([
            r.mode.name().to_string(),
            r.controller.name().to_string(),
            r.trajectories.to_string(),
            last.map_or(String::new(), |l| sig9(l.expected_f)),
            last.map_or(String::new(), |l| sig9(l.safe_fraction)),
            if last.is_some() {
                sig9(min_f)
            } else {
                String::new()
            },
            r.infeasible_steps.to_string(),
            r.degenerate_steps.to_string(),
            sig9(c.alpha),
            sig9(c.epsilon),
            sig9(scenario.barrier.horizon),
            sig9(b.eta),
            sig9(b.epsilon_prsbc),
            sig9(b.gamma_cvar),
            sig9(b.beta_cvar),
            sig9(scenario.run.dt),
        ]);
        cols
    });
    write_table(path, &SUMMARY_HEADER, rows)
}

pub const PG_CURVE_HEADER: [&str; 9] = [
    "build_id",
    "master_seed",
    "scenario",
    "filtered",
    "iteration",
    "theta",
    "mean_return",
    "max_state",
    "interventions",
];

pub fn write_pg_curve(path: &Path, stamp: Stamp, runs: &[(bool, &PgResult)]) -> Result<()> {
    let rows = runs.iter().flat_map(|(filtered, res)| {
        res.curve.iter().map(move |c| {
            let mut cols = stamp_cols(stamp);
            cols.extend([
                filtered.to_string(),
                c.iteration.to_string(),
                sig9(c.theta),
                sig9(c.mean_return),
                c.max_state.to_string(),
                c.interventions.to_string(),
            ]);
            cols
        })
    });
    write_table(path, &PG_CURVE_HEADER, rows)
}

pub const PATHS_HEADER: [&str; 9] = [
    "build_id",
    "master_seed",
    "scenario",
    "filtered",
    "episode",
    "step",
    "state",
    "nominal",
    "executed",
];

/// Sample state paths; the final state of an episode has no actions.
pub fn write_paths(path: &Path, stamp: Stamp, runs: &[(bool, &[Episode])]) -> Result<()> {
    let rows = runs.iter().flat_map(|(filtered, eps)| {
        eps.iter().enumerate().flat_map(move |(e, ep)| {
            ep.states.iter().enumerate().map(move |(k, x)| {
                let mut cols = stamp_cols(stamp);
                cols.extend([
                    filtered.to_string(),
                    e.to_string(),
                    k.to_string(),
                    x.to_string(),
                    ep.nominal.get(k).map_or(String::new(), |u| u.to_string()),
                    ep.executed.get(k).map_or(String::new(), |u| u.to_string()),
                ]);
                cols
            })
        })
    });
    write_table(path, &PATHS_HEADER, rows)
}

pub const Q_HEADER: [&str; 8] = [
    "build_id",
    "master_seed",
    "scenario",
    "filtered",
    "iteration",
    "q_down",
    "q_stay",
    "q_up",
];

/// `Q(x0, ·)` after every iteration.
pub fn write_q_history(path: &Path, stamp: Stamp, runs: &[(bool, &QResult)]) -> Result<()> {
    let rows = runs.iter().flat_map(|(filtered, res)| {
        res.history.iter().enumerate().map(move |(i, q)| {
            let mut cols = stamp_cols(stamp);
            cols.extend([
                filtered.to_string(),
                (i + 1).to_string(),
                sig9(q[0]),
                sig9(q[1]),
                sig9(q[2]),
            ]);
            cols
        })
    });
    write_table(path, &Q_HEADER, rows)
}

pub const ACCEPTANCE_HEADER: [&str; 4] = ["build_id", "criterion", "pass", "detail"];

pub fn write_acceptance(path: &Path, results: &[CriterionResult]) -> Result<()> {
    let rows = results.iter().map(|r| {
        vec![
            BUILD_ID.to_string(),
            r.number.to_string(),
            r.pass.to_string(),
            r.detail.clone(),
        ]
    });
    write_table(path, &ACCEPTANCE_HEADER, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(0.9), "0.9");
        assert_eq!(sig9(1.234567891234), "1.23456789");
        assert_eq!(sig9(-1234567890123.0), "-1234567890000");
        assert_eq!(sig9(1.0 / 3.0e-7), "3333333.33");
        assert_eq!(sig9(2.5e-12), "0.0000000000025");
        assert_eq!(sig9(0.0), "0");
        for v in [0.123456789987, -7.77e-5, 1e10 / 7.0] {
            let back: f64 = sig9(v).parse().unwrap();
            assert!(((back - v) / v).abs() < 5e-9);
        }
    }

    #[test]
    fn empty_runs_give_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/empty.csv");
        let stamp = Stamp {
            scenario: "s",
            master_seed: 1,
        };
        write_series(&path, stamp, &[]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{}\n", SERIES_HEADER.join(",")));
    }
}
