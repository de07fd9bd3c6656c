use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use psafe_core::estimation::SafeProbField;
use psafe_experiments::acceptance;
use psafe_experiments::output::{self, Stamp};
use psafe_experiments::rl_runs::{run_pg, run_q, RlScenario};
use psafe_experiments::{
    build_field, run, Controller, ExperimentError, Mode, Result, Scenario, BUILTIN_SCENARIOS,
};

#[derive(Parser)]
#[command(
    name = "psafe",
    version,
    about = "Probabilistic safety certificates: field estimation, closed-loop comparisons and safe RL"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Scenario file, or one of the built-in names system1, system2, nn.
    #[arg(long, default_value = "system1")]
    scenario: String,
    /// Master seed; defaults to the scenario's.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// proposed, stocbf, prsbc, cvar or nominal; repeatable. Defaults to all.
    #[arg(long)]
    controller: Vec<String>,
    /// Previously estimated field; tabulated afresh when absent.
    #[arg(long)]
    field: Option<PathBuf>,
}

#[derive(Args)]
struct RlArgs {
    /// RL scenario file; the built-in chain when absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Run only the filtered (true) or unfiltered (false) learner.
    #[arg(long)]
    filtered: Option<bool>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Tabulate the safe-probability field of a scenario.
    Estimate(Common),
    /// Every controller applies the input meeting its condition with equality.
    WorstCase(RunArgs),
    /// The nominal controller is filtered only when it violates the condition.
    Switching(RunArgs),
    /// Policy gradient with and without the safety filter.
    RlPg(RlArgs),
    /// Q-learning with and without the safety filter.
    RlQ(RlArgs),
    /// Evaluate the acceptance criteria; exits nonzero if any fails.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Criterion numbers to evaluate; all when absent.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u8>,
    },
}

fn load_scenario(name: &str) -> Result<Scenario> {
    let path = Path::new(name);
    if !path.exists() {
        if let Some((_, text)) = BUILTIN_SCENARIOS.iter().find(|(n, _)| *n == name) {
            return Scenario::from_toml(text);
        }
    }
    Scenario::load(path)
}

fn field_for(
    scenario: &Scenario,
    compiled: &psafe_experiments::Compiled,
    field: Option<&Path>,
    seed: u64,
) -> Result<SafeProbField> {
    match field {
        Some(p) => Ok(SafeProbField::load(p)?),
        None => {
            info!("tabulating the field of {}", scenario.name);
            build_field(compiled, seed)
        }
    }
}

fn run_mode(args: &RunArgs, mode: Mode) -> Result<()> {
    let scenario = load_scenario(&args.common.scenario)?;
    let seed = args.common.seed.unwrap_or(scenario.run.seed);
    let compiled = scenario.compile()?;
    let field = field_for(&scenario, &compiled, args.field.as_deref(), seed)?;
    let controllers: Vec<Controller> = if args.controller.is_empty() {
        let mut all = Controller::COMPARED.to_vec();
        if mode == Mode::Switching {
            all.push(Controller::Nominal);
        }
        all
    } else {
        args.controller
            .iter()
            .map(|c| c.parse())
            .collect::<Result<_>>()?
    };
    let mut runs = Vec::new();
    for c in controllers {
        info!("{} {} with {}", scenario.name, mode.name(), c);
        runs.push(run(
            &compiled,
            &field,
            c,
            mode,
            scenario.run.trajectories,
            seed,
        )?);
    }
    let stamp = Stamp {
        scenario: &scenario.name,
        master_seed: seed,
    };
    let tag = mode.name().replace('-', "_");
    let series = args.common.out.join(format!("{}_{tag}.csv", scenario.name));
    let summary = args
        .common
        .out
        .join(format!("{}_{tag}_summary.csv", scenario.name));
    output::write_series(&series, stamp, &runs)?;
    output::write_summary(&summary, stamp, &scenario, &runs)?;
    for r in &runs {
        if let Some(last) = r.final_row() {
            println!(
                "{:>9}  final E[F] {:.4}  safe fraction {:.3}",
                r.controller.name(),
                last.expected_f,
                last.safe_fraction
            );
        }
    }
    println!("wrote {} and {}", series.display(), summary.display());
    Ok(())
}

fn load_rl(args: &RlArgs) -> Result<RlScenario> {
    match &args.scenario {
        Some(p) => RlScenario::load(p),
        None => RlScenario::from_toml(acceptance::RL),
    }
}

fn modes(filtered: Option<bool>) -> Vec<bool> {
    filtered.map_or(vec![false, true], |f| vec![f])
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Cmd::Estimate(c) => {
            let scenario = load_scenario(&c.scenario)?;
            let seed = c.seed.unwrap_or(scenario.run.seed);
            let field = build_field(&scenario.compile()?, seed)?;
            std::fs::create_dir_all(&c.out).map_err(|e| ExperimentError::io(&c.out, e))?;
            let path = c.out.join(format!("{}_field.json", scenario.name));
            field.save(&path)?;
            println!("wrote {}", path.display());
        }
        Cmd::WorstCase(a) => run_mode(&a, Mode::WorstCase)?,
        Cmd::Switching(a) => run_mode(&a, Mode::Switching)?,
        Cmd::RlPg(a) => {
            let s = load_rl(&a)?;
            let seed = a.seed.unwrap_or(s.seed);
            let runs = modes(a.filtered)
                .into_iter()
                .map(|f| run_pg(&s, f, seed))
                .collect::<Result<Vec<_>>>()?;
            let stamp = Stamp {
                scenario: &s.name,
                master_seed: seed,
            };
            let curves: Vec<_> = runs.iter().map(|r| (r.filtered, &r.result)).collect();
            let paths: Vec<_> = runs
                .iter()
                .map(|r| (r.filtered, r.paths.as_slice()))
                .collect();
            output::write_pg_curve(&a.out.join("rl_pg_curve.csv"), stamp, &curves)?;
            output::write_paths(&a.out.join("rl_pg_paths.csv"), stamp, &paths)?;
            for r in &runs {
                println!(
                    "filtered {:5}  theta {:.4}  highest state {}",
                    r.filtered, r.result.policy.theta, r.result.max_state
                );
            }
        }
        Cmd::RlQ(a) => {
            let s = load_rl(&a)?;
            let seed = a.seed.unwrap_or(s.seed);
            let fs = modes(a.filtered);
            let runs = fs
                .iter()
                .map(|&f| run_q(&s, f, seed))
                .collect::<Result<Vec<_>>>()?;
            let stamp = Stamp {
                scenario: &s.name,
                master_seed: seed,
            };
            let rows: Vec<_> = fs.iter().copied().zip(runs.iter()).collect();
            output::write_q_history(&a.out.join("rl_q_history.csv"), stamp, &rows)?;
            for (f, r) in &rows {
                println!("filtered {f:5}  Q(x0, ·) = {:.4?}", r.table.row(s.q.x0));
            }
        }
        Cmd::Report { out, criteria } => {
            let numbers: Vec<u8> = if criteria.is_empty() {
                acceptance::ALL.iter().map(|(n, _)| *n).collect()
            } else {
                criteria
            };
            let results: Vec<_> = numbers
                .iter()
                .map(|&n| acceptance::evaluate(n))
                .inspect(|r| println!("{r}"))
                .collect();
            output::write_acceptance(&out.join("acceptance.csv"), &results)?;
            return Ok(results.iter().all(|r| r.pass));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
