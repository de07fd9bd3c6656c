//! Scenario files: a versioned TOML description of a scalar control-affine
//! system, its barrier, the nominal controller and every run setting.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use psafe_core::baselines::BaselineParams;
use psafe_core::certificate::{CertificateParams, GeneratorForm, InfeasibilityPolicy};
use psafe_core::estimation::InterpOrder;
use psafe_core::sde::{BarrierSpec, HorizonMode, Policy, SafetyType, SdeSystem, State};
use serde::{Deserialize, Serialize};

use crate::error::{ExperimentError, Result};
use crate::expr::{Expr, Piecewise};

pub const SCHEMA_VERSION: u32 = 1;

/// Name of the state variable in system, barrier and nominal expressions.
pub const STATE_VAR: &str = "x";
/// Name of the margin variable in the margin-rate expression.
pub const MARGIN_VAR: &str = "l";

/// A scalar function of the state: a number, an expression, or a list of
/// guarded cases whose last entry has no guard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FunctionDef {
    Constant(f64),
    Expression(String),
    Cases(Vec<Case>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Case {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<String>,
    pub value: String,
}

impl FunctionDef {
    pub fn compile(&self, var: &str) -> Result<Piecewise> {
        let vars = [var];
        match self {
            FunctionDef::Constant(v) => Ok(Piecewise::constant(*v)),
            FunctionDef::Expression(s) => Piecewise::new(vec![(None, Expr::parse(s, &vars)?)]),
            FunctionDef::Cases(cases) => Piecewise::new(
                cases
                    .iter()
                    .map(|c| {
                        let guard = c
                            .when
                            .as_deref()
                            .map(|w| Expr::parse(w, &vars))
                            .transpose()?;
                        Ok((guard, Expr::parse(&c.value, &vars)?))
                    })
                    .collect::<Result<_>>()?,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub drift: FunctionDef,
    pub input: FunctionDef,
    pub diffusion: FunctionDef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSection {
    /// `φ(x)`; the safe set is `{φ ≥ L}`.
    pub phi: String,
    #[serde(default)]
    pub ell0: f64,
    /// Rate of the margin `L` as an expression in `l`.
    #[serde(default = "zero_expr")]
    pub margin_rate: String,
    #[serde(default = "fixed_mode")]
    pub horizon_mode: HorizonMode,
    /// Outlook horizon `H`, in time units.
    #[serde(default = "ten")]
    pub horizon: f64,
    /// 1 invariance, 2 maximal invariance, 3 reach, 4 maximal reach.
    #[serde(default = "one")]
    pub safety_type: u8,
}

fn zero_expr() -> String {
    "0".into()
}
fn fixed_mode() -> HorizonMode {
    HorizonMode::Fixed
}
fn ten() -> f64 {
    10.0
}
fn one() -> u8 {
    1
}

/// A feedback law `u = N(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NominalSpec {
    /// `u = gain·x`.
    Linear {
        gain: f64,
    },
    /// `relu(w2·relu(w1·x + b1) + b2)`.
    Network {
        w1: f64,
        b1: f64,
        w2: f64,
        b2: f64,
    },
    Expression {
        value: String,
    },
    /// External program: one state per line on stdin, one input per line on
    /// stdout.
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
    #[default]
    Zero,
}

/// How the proposed controller modifies the nominal input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    #[default]
    Additive,
    Qp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateSection {
    pub alpha: f64,
    pub epsilon: f64,
    pub generator: GeneratorForm,
    pub infeasibility: InfeasibilityPolicy,
    pub drop_hessian: bool,
    pub filter: FilterKind,
}

impl Default for CertificateSection {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            epsilon: 0.1,
            generator: GeneratorForm::Backward,
            infeasibility: InfeasibilityPolicy::HoldNominal,
            drop_hessian: false,
            filter: FilterKind::Additive,
        }
    }
}

impl CertificateSection {
    pub fn params(&self) -> CertificateParams {
        CertificateParams {
            alpha_gain: self.alpha,
            epsilon: self.epsilon,
            infeasibility: self.infeasibility,
            generator: self.generator,
            drop_hessian: self.drop_hessian,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub x0: f64,
    pub dt: f64,
    pub t_max: f64,
    pub trajectories: usize,
    pub seed: u64,
    /// Unit of `dt`, `t_max` and the barrier horizon.
    pub time_unit: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            x0: 3.0,
            dt: 0.1,
            t_max: 10.0,
            trajectories: 100,
            seed: 7,
            time_unit: "s".into(),
        }
    }
}

impl RunSection {
    pub fn steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }
}

/// Grid and sample count of the tabulated safe-probability field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSection {
    pub samples: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub x_step: f64,
    pub horizon_min: f64,
    pub horizon_max: f64,
    pub horizon_step: f64,
    pub order: InterpOrder,
}

impl Default for EstimationSection {
    fn default() -> Self {
        Self {
            samples: 10_000,
            x_min: -3.0,
            x_max: 14.0,
            x_step: 0.1,
            horizon_min: 0.0,
            horizon_max: 12.0,
            horizon_step: 0.5,
            order: InterpOrder::Cubic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub system: SystemSection,
    pub barrier: BarrierSection,
    pub nominal: NominalSpec,
    /// Policy the safe-probability field is tabulated under.
    #[serde(default)]
    pub field_policy: NominalSpec,
    #[serde(default)]
    pub certificate: CertificateSection,
    #[serde(default)]
    pub baselines: BaselineParams,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub estimation: EstimationSection,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario =
            toml::from_str(text).map_err(|e| ExperimentError::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ExperimentError::Scenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| ExperimentError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Scenario(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let r = &self.run;
        if !(r.dt > 0.0) || !(r.t_max >= 0.0) || !r.x0.is_finite() {
            return bad("run needs dt > 0, t_max ≥ 0 and a finite x0".into());
        }
        let e = &self.estimation;
        if e.samples == 0 || !(e.x_step > 0.0) || !(e.horizon_step > 0.0) {
            return bad("estimation needs samples and positive grid steps".into());
        }
        if !(e.x_max > e.x_min) || !(e.horizon_max > e.horizon_min) || e.horizon_min < 0.0 {
            return bad("estimation grid bounds are empty or negative".into());
        }
        if !(self.barrier.horizon > 0.0) {
            return bad("barrier horizon must be positive".into());
        }
        SafetyType::from_code(self.barrier.safety_type)?;
        self.certificate.params().validate()?;
        self.baselines.validate()?;
        Ok(())
    }

    pub fn compile(&self) -> Result<Compiled> {
        self.validate()?;
        let f = self.system.drift.compile(STATE_VAR)?;
        let g = self.system.input.compile(STATE_VAR)?;
        let s = self.system.diffusion.compile(STATE_VAR)?;
        let system = SdeSystem::scalar(
            move |x| f.eval(&[x]),
            move |x| g.eval(&[x]),
            move |x| s.eval(&[x]),
        );

        let b = &self.barrier;
        let phi = Expr::parse(&b.phi, &[STATE_VAR])?;
        let d1 = phi.derivative(0)?;
        let d2 = d1.derivative(0)?;
        let margin = Expr::parse(&b.margin_rate, &[MARGIN_VAR])?;
        let mut barrier = BarrierSpec::new(
            move |x: &State| phi.eval(&[x[0]]),
            move |x: &State| DVector::from_element(1, d1.eval(&[x[0]])),
            move |x: &State| DMatrix::from_element(1, 1, d2.eval(&[x[0]])),
        )
        .with_horizon(b.horizon_mode, b.horizon)
        .with_type(SafetyType::from_code(b.safety_type)?);
        if margin != Expr::Num(0.0) || b.ell0 != 0.0 {
            barrier = barrier.with_margin(move |l| margin.eval(&[l]), b.ell0);
        }

        Ok(Compiled {
            scenario: self.clone(),
            system,
            barrier,
            nominal: Nominal::new(&self.nominal)?,
            field_policy: Nominal::new(&self.field_policy)?,
            certificate: self.certificate.params(),
        })
    }
}

/// A scenario with its expressions compiled into a system, barrier and
/// controllers.
pub struct Compiled {
    pub scenario: Scenario,
    pub system: SdeSystem,
    pub barrier: BarrierSpec,
    pub nominal: Nominal,
    pub field_policy: Nominal,
    pub certificate: CertificateParams,
}

/// Two-layer scalar rectifier network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnNominal {
    pub w1: f64,
    pub b1: f64,
    pub w2: f64,
    pub b2: f64,
}

impl NnNominal {
    pub fn evaluate(&self, x: f64) -> f64 {
        let relu = |y: f64| y.max(0.0);
        relu(self.w2 * relu(self.w1 * x + self.b1) + self.b2)
    }
}

struct CommandProcess {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl CommandProcess {
    fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| ExperimentError::io(Path::new(program), e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            child,
            stdin,
            stdout,
        })
    }

    fn query(&mut self, x: f64) -> std::io::Result<f64> {
        writeln!(self.stdin, "{x}")?;
        self.stdin.flush()?;
        let mut line = String::new();
        if self.stdout.read_line(&mut line)? == 0 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "controller exited",
            ));
        }
        line.trim().parse().map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("`{}`: {e}", line.trim()),
            )
        })
    }
}

impl Drop for CommandProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

enum Law {
    Linear(f64),
    Network(NnNominal),
    Expression(Expr),
    Command(Mutex<CommandProcess>),
    Zero,
}

/// A nominal controller seen only through its output.
#[derive(Clone)]
pub struct Nominal {
    law: Arc<Law>,
}

impl std::fmt::Debug for Nominal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Nominal").finish_non_exhaustive()
    }
}

impl Nominal {
    pub fn new(spec: &NominalSpec) -> Result<Self> {
        let law = match spec {
            NominalSpec::Linear { gain } => Law::Linear(*gain),
            NominalSpec::Network { w1, b1, w2, b2 } => Law::Network(NnNominal {
                w1: *w1,
                b1: *b1,
                w2: *w2,
                b2: *b2,
            }),
            NominalSpec::Expression { value } => Law::Expression(Expr::parse(value, &[STATE_VAR])?),
            NominalSpec::Command { program, args } => {
                Law::Command(Mutex::new(CommandProcess::spawn(program, args)?))
            }
            NominalSpec::Zero => Law::Zero,
        };
        Ok(Self { law: Arc::new(law) })
    }

    /// `N(x)`. A failing external controller yields NaN, which the simulator
    /// reports as a divergence.
    pub fn evaluate(&self, x: f64) -> f64 {
        match &*self.law {
            Law::Linear(k) => k * x,
            Law::Network(n) => n.evaluate(x),
            Law::Expression(e) => e.eval(&[x]),
            Law::Command(p) => {
                let mut p = p.lock().unwrap_or_else(|e| e.into_inner());
                p.query(x).unwrap_or_else(|e| {
                    log::error!("external controller failed at x = {x}: {e}");
                    f64::NAN
                })
            }
            Law::Zero => 0.0,
        }
    }
}

impl Policy for Nominal {
    fn act(&self, _t: f64, x: &State) -> DVector<f64> {
        DVector::from_element(1, self.evaluate(x[0]))
    }
}
