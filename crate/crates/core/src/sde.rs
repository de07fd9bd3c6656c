//! Control-affine SDEs `dX = (f(X) + g(X)U) dt + σ(X) dW`, barrier and margin
//! specifications, the augmented certificate state and Euler–Maruyama
//! simulation with recorded noise increments.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

pub type State = DVector<f64>;

type VecMap = Arc<dyn Fn(&State) -> DVector<f64> + Send + Sync>;
type MatMap = Arc<dyn Fn(&State) -> DMatrix<f64> + Send + Sync>;
type ScalarMap = Arc<dyn Fn(&State) -> f64 + Send + Sync>;
type RateMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Drift, input matrix and diffusion of a control-affine SDE.
#[derive(Clone)]
pub struct SdeSystem {
    n: usize,
    m: usize,
    xi: usize,
    f: VecMap,
    g: MatMap,
    sigma: MatMap,
}

impl std::fmt::Debug for SdeSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeSystem")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("xi", &self.xi)
            .finish_non_exhaustive()
    }
}

fn check_vec(what: &'static str, v: &DVector<f64>, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension {
            what,
            expected: n.to_string(),
            got: v.len().to_string(),
        });
    }
    match v.iter().position(|c| !c.is_finite()) {
        Some(index) => Err(Error::NumericalDivergence {
            what,
            index,
            step: None,
        }),
        None => Ok(()),
    }
}

fn check_mat(what: &'static str, a: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if a.shape() != (rows, cols) {
        return Err(Error::Dimension {
            what,
            expected: format!("{rows}x{cols}"),
            got: format!("{}x{}", a.nrows(), a.ncols()),
        });
    }
    match a.iter().position(|c| !c.is_finite()) {
        Some(index) => Err(Error::NumericalDivergence {
            what,
            index,
            step: None,
        }),
        None => Ok(()),
    }
}

impl SdeSystem {
    pub fn new(
        n: usize,
        m: usize,
        xi: usize,
        f: impl Fn(&State) -> DVector<f64> + Send + Sync + 'static,
        g: impl Fn(&State) -> DMatrix<f64> + Send + Sync + 'static,
        sigma: impl Fn(&State) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            m,
            xi,
            f: Arc::new(f),
            g: Arc::new(g),
            sigma: Arc::new(sigma),
        }
    }

    /// Scalar state, scalar input, scalar noise.
    pub fn scalar(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(
            1,
            1,
            1,
            move |x| DVector::from_element(1, f(x[0])),
            move |x| DMatrix::from_element(1, 1, g(x[0])),
            move |x| DMatrix::from_element(1, 1, sigma(x[0])),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn noise_dim(&self) -> usize {
        self.xi
    }

    pub fn drift(&self, x: &State) -> Result<DVector<f64>> {
        check_vec("state", x, self.n)?;
        let v = (self.f)(x);
        check_vec("drift", &v, self.n)?;
        Ok(v)
    }

    pub fn input_matrix(&self, x: &State) -> Result<DMatrix<f64>> {
        check_vec("state", x, self.n)?;
        let a = (self.g)(x);
        check_mat("input matrix", &a, self.n, self.m)?;
        Ok(a)
    }

    pub fn diffusion(&self, x: &State) -> Result<DMatrix<f64>> {
        check_vec("state", x, self.n)?;
        let a = (self.sigma)(x);
        check_mat("diffusion", &a, self.n, self.xi)?;
        Ok(a)
    }

    /// Drift of the closed loop under control `u`.
    pub fn controlled_drift(&self, x: &State, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_vec("control", u, self.m)?;
        Ok(self.drift(x)? + self.input_matrix(x)? * u)
    }
}

/// One Euler–Maruyama step `x + (f + g u) dt + σ dW`.
pub fn em_step(
    sys: &SdeSystem,
    x: &State,
    u: &DVector<f64>,
    dt: f64,
    dw: &DVector<f64>,
) -> Result<State> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!(
            "step size must be positive, got {dt}"
        )));
    }
    check_vec("noise increment", dw, sys.xi)?;
    let next = x + sys.controlled_drift(x, u)? * dt + sys.diffusion(x)? * dw;
    check_vec("next state", &next, sys.n)?;
    Ok(next)
}

/// A memory-less feedback law; `t` is time since the start of the run.
pub trait Policy: Send + Sync {
    fn act(&self, t: f64, x: &State) -> DVector<f64>;
}

impl<F> Policy for F
where
    F: Fn(&State) -> DVector<f64> + Send + Sync,
{
    fn act(&self, _t: f64, x: &State) -> DVector<f64> {
        self(x)
    }
}

/// Constant zero input of dimension `m`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroPolicy(pub usize);

impl Policy for ZeroPolicy {
    fn act(&self, _t: f64, _x: &State) -> DVector<f64> {
        DVector::zeros(self.0)
    }
}

/// Seeded source of Brownian increments `dW ~ N(0, dt I)`.
pub struct NoiseSource {
    rng: SimRng,
    scale: f64,
    dim: usize,
}

impl NoiseSource {
    pub fn new(seed: u64, dt: f64, dim: usize) -> Self {
        Self {
            rng: rng::rng(seed),
            scale: dt.sqrt(),
            dim,
        }
    }

    pub fn next_increment(&mut self) -> DVector<f64> {
        let scale = self.scale;
        let rng = &mut self.rng;
        DVector::from_fn(self.dim, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
    }
}

/// A simulated path with its controls and the noise that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<State>,
    pub controls: Vec<DVector<f64>>,
    pub noise_increments: Vec<DVector<f64>>,
    pub seed: u64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    /// Re-applies the recorded controls and increments from the first state.
    pub fn replay(&self, sys: &SdeSystem) -> Result<Vec<State>> {
        let mut out = Vec::with_capacity(self.states.len());
        let mut x = self.states[0].clone();
        out.push(x.clone());
        for (k, (u, dw)) in self.controls.iter().zip(&self.noise_increments).enumerate() {
            x = em_step(sys, &x, u, self.dt, dw).map_err(|e| e.at_step(k))?;
            out.push(x.clone());
        }
        Ok(out)
    }
}

/// Simulates `steps` Euler–Maruyama steps from `x0` under `policy`.
pub fn simulate(
    sys: &SdeSystem,
    policy: &dyn Policy,
    x0: &State,
    steps: usize,
    dt: f64,
    seed: u64,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::Config("trajectory needs at least one step".into()));
    }
    let mut noise = NoiseSource::new(seed, dt, sys.xi);
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut increments = Vec::with_capacity(steps);
    let mut x = x0.clone();
    states.push(x.clone());
    for k in 0..steps {
        let u = policy.act(k as f64 * dt, &x);
        let dw = noise.next_increment();
        x = em_step(sys, &x, &u, dt, &dw).map_err(|e| e.at_step(k))?;
        states.push(x.clone());
        controls.push(u);
        increments.push(dw);
    }
    Ok(Trajectory {
        dt,
        states,
        controls,
        noise_increments: increments,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HorizonMode {
    /// Safety is always judged over the next `H` time units: `T ≡ H`.
    Fixed,
    /// Safety is judged over what remains of `[0, H]`: `T = H - t`.
    Receding,
}

/// Which long-term probability the field holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SafetyType {
    /// Stay in `C(L)` over the horizon under the given policy.
    Invariance,
    /// Best achievable probability of staying in `C(L)`.
    MaxInvariance,
    /// Enter `C(L)` within the horizon under the given policy.
    Reach,
    /// Best achievable probability of entering `C(L)`.
    MaxReach,
}

impl SafetyType {
    pub fn code(self) -> u8 {
        match self {
            SafetyType::Invariance => 1,
            SafetyType::MaxInvariance => 2,
            SafetyType::Reach => 3,
            SafetyType::MaxReach => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(SafetyType::Invariance),
            2 => Ok(SafetyType::MaxInvariance),
            3 => Ok(SafetyType::Reach),
            4 => Ok(SafetyType::MaxReach),
            _ => Err(Error::Config(format!(
                "safety type must be 1..=4, got {code}"
            ))),
        }
    }

    pub fn is_reach(self) -> bool {
        matches!(self, SafetyType::Reach | SafetyType::MaxReach)
    }
}

/// Barrier `φ` with safe set `C(L) = {x : φ(x) ≥ L}`, margin dynamics
/// `dL/dt = f_ℓ(L)` and the outlook horizon.
#[derive(Clone)]
pub struct BarrierSpec {
    phi: ScalarMap,
    grad: VecMap,
    hess: MatMap,
    margin_rate: RateMap,
    margin_rate_is_zero: bool,
    pub ell0: f64,
    pub horizon_mode: HorizonMode,
    pub horizon: f64,
    pub safety_type: SafetyType,
}

impl std::fmt::Debug for BarrierSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BarrierSpec")
            .field("ell0", &self.ell0)
            .field("horizon_mode", &self.horizon_mode)
            .field("horizon", &self.horizon)
            .field("safety_type", &self.safety_type)
            .finish_non_exhaustive()
    }
}

impl BarrierSpec {
    /// Barrier from `φ`, its gradient and Hessian. Defaults: constant zero
    /// margin, fixed horizon of 10, invariance objective.
    pub fn new(
        phi: impl Fn(&State) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&State) -> DVector<f64> + Send + Sync + 'static,
        hess: impl Fn(&State) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            phi: Arc::new(phi),
            grad: Arc::new(grad),
            hess: Arc::new(hess),
            margin_rate: Arc::new(|_| 0.0),
            margin_rate_is_zero: true,
            ell0: 0.0,
            horizon_mode: HorizonMode::Fixed,
            horizon: 10.0,
            safety_type: SafetyType::Invariance,
        }
    }

    /// `φ(x) = normal·x − offset`.
    pub fn affine(normal: DVector<f64>, offset: f64) -> Self {
        let n = normal.len();
        let w = normal.clone();
        Self::new(
            move |x| w.dot(x) - offset,
            move |_| normal.clone(),
            move |_| DMatrix::zeros(n, n),
        )
    }

    /// Scalar `φ(x) = x − level`.
    pub fn scalar_threshold(level: f64) -> Self {
        Self::affine(DVector::from_element(1, 1.0), level)
    }

    pub fn with_horizon(mut self, mode: HorizonMode, horizon: f64) -> Self {
        self.horizon_mode = mode;
        self.horizon = horizon;
        self
    }

    pub fn with_type(mut self, safety_type: SafetyType) -> Self {
        self.safety_type = safety_type;
        self
    }

    pub fn with_margin(
        mut self,
        rate: impl Fn(f64) -> f64 + Send + Sync + 'static,
        ell0: f64,
    ) -> Self {
        self.margin_rate = Arc::new(rate);
        self.margin_rate_is_zero = false;
        self.ell0 = ell0;
        self
    }

    pub fn phi(&self, x: &State) -> f64 {
        (self.phi)(x)
    }

    pub fn grad_phi(&self, x: &State) -> DVector<f64> {
        (self.grad)(x)
    }

    pub fn hess_phi(&self, x: &State) -> DMatrix<f64> {
        (self.hess)(x)
    }

    pub fn margin_rate(&self, l: f64) -> f64 {
        if self.margin_rate_is_zero {
            0.0
        } else {
            (self.margin_rate)(l)
        }
    }

    /// `dT/dt` of the augmented state.
    pub fn horizon_rate(&self) -> f64 {
        match self.horizon_mode {
            HorizonMode::Fixed => 0.0,
            HorizonMode::Receding => -1.0,
        }
    }

    /// Margin after `t` time units, integrating `f_ℓ` with classical RK4.
    pub fn margin_at(&self, t: f64) -> f64 {
        if self.margin_rate_is_zero || t <= 0.0 {
            return self.ell0;
        }
        let steps = (t / 1e-2).ceil().max(1.0) as usize;
        let h = t / steps as f64;
        let mut l = self.ell0;
        for _ in 0..steps {
            let k1 = self.margin_rate(l);
            let k2 = self.margin_rate(l + 0.5 * h * k1);
            let k3 = self.margin_rate(l + 0.5 * h * k2);
            let k4 = self.margin_rate(l + h * k3);
            l += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        l
    }

    /// Outlook horizon after `t` time units.
    pub fn horizon_at(&self, t: f64) -> Result<f64> {
        match self.horizon_mode {
            HorizonMode::Fixed => Ok(self.horizon),
            HorizonMode::Receding => {
                if t > self.horizon + 1e-12 {
                    Err(Error::HorizonExhausted {
                        elapsed: t,
                        horizon: self.horizon,
                    })
                } else {
                    Ok((self.horizon - t).max(0.0))
                }
            }
        }
    }

    pub fn contains(&self, x: &State, level: f64) -> bool {
        self.phi(x) >= level
    }
}

/// `Z = (T, L, φ(x), x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub horizon: f64,
    pub margin: f64,
    pub phi: f64,
    pub x: State,
}

impl AugmentedState {
    pub fn new(horizon: f64, margin: f64, x: State, spec: &BarrierSpec) -> Self {
        let phi = spec.phi(&x);
        Self {
            horizon,
            margin,
            phi,
            x,
        }
    }

    /// Length `n + 3`.
    pub fn dim(&self) -> usize {
        self.x.len() + 3
    }

    /// Coordinates in the order `(T, L, φ, x_1, …, x_n)`.
    pub fn coords(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        v[0] = self.horizon;
        v[1] = self.margin;
        v[2] = self.phi;
        v.rows_mut(3, self.x.len()).copy_from(&self.x);
        v
    }
}

/// Augmented state of `x` after `t_elapsed` time units.
pub fn augment(x: &State, t_elapsed: f64, spec: &BarrierSpec) -> Result<AugmentedState> {
    let horizon = spec.horizon_at(t_elapsed)?;
    Ok(AugmentedState::new(
        horizon,
        spec.margin_at(t_elapsed),
        x.clone(),
        spec,
    ))
}

/// `∇φ·f + ½ tr(σσᵀ ∇²φ)`, the uncontrolled generator applied to `φ`.
pub fn phi_drift(sys: &SdeSystem, spec: &BarrierSpec, x: &State) -> Result<f64> {
    let f = sys.drift(x)?;
    let s = sys.diffusion(x)?;
    let grad = spec.grad_phi(x);
    let hess = spec.hess_phi(x);
    check_vec("barrier gradient", &grad, sys.n)?;
    check_mat("barrier Hessian", &hess, sys.n, sys.n)?;
    let ito = 0.5 * (&s * s.transpose()).component_mul(&hess).sum();
    Ok(grad.dot(&f) + ito)
}

/// `∇φᵀ g`, how the input moves the barrier (length `m`).
pub fn phi_input_gain(sys: &SdeSystem, spec: &BarrierSpec, x: &State) -> Result<DVector<f64>> {
    Ok(sys.input_matrix(x)?.transpose() * spec.grad_phi(x))
}

/// `∇φᵀ σ`, how the noise moves the barrier (length `xi`).
pub fn phi_noise_gain(sys: &SdeSystem, spec: &BarrierSpec, x: &State) -> Result<DVector<f64>> {
    Ok(sys.diffusion(x)?.transpose() * spec.grad_phi(x))
}
