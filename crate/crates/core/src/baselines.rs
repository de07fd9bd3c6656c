//! Comparison safety filters that act on the barrier directly: stochastic
//! control barrier functions, probabilistic safety barrier certificates and a
//! conditional-value-at-risk barrier.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::certificate::{CertificateParams, FilterOutcome, LinearConstraint};
use crate::error::{Error, Result};
use crate::rng;
use crate::sde::{phi_drift, phi_input_gain, phi_noise_gain, BarrierSpec, SdeSystem, State};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineParams {
    /// Class-function gain of the StoCBF and PrSBC conditions.
    pub eta: f64,
    pub epsilon_prsbc: f64,
    pub gamma_cvar: f64,
    /// Tail fraction of the CVaR.
    pub beta_cvar: f64,
    pub cvar_samples: usize,
    /// Bisection tolerance of the CVaR input search.
    pub cvar_tol: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            eta: 1.0,
            epsilon_prsbc: 0.1,
            gamma_cvar: 0.65,
            beta_cvar: 0.1,
            cvar_samples: 1000,
            cvar_tol: 1e-4,
        }
    }
}

impl BaselineParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.eta > 0.0) {
            return Err(Error::Config(format!("eta {} must be positive", self.eta)));
        }
        if !unit(self.epsilon_prsbc)
            || !unit(self.gamma_cvar)
            || !(self.beta_cvar > 0.0 && self.beta_cvar <= 1.0)
        {
            return Err(Error::Config(
                "epsilon, gamma and beta must lie in (0, 1)".into(),
            ));
        }
        if self.cvar_samples < 100 {
            return Err(Error::Config(format!(
                "need at least 100 CVaR samples, got {}",
                self.cvar_samples
            )));
        }
        Ok(())
    }
}

/// `D_φ(x, u) ≥ −ηφ(x)` as `a·u ≥ b`.
pub fn stocbf_constraint(
    sys: &SdeSystem,
    spec: &BarrierSpec,
    eta: f64,
    x: &State,
) -> Result<LinearConstraint> {
    let a = phi_input_gain(sys, spec, x)?;
    let b = -eta * spec.phi(x) - phi_drift(sys, spec, x)?;
    Ok(LinearConstraint::new(a, b))
}

/// Chance-constrained StoCBF: over one step of length `dt` the generator
/// estimate `(φ(x') − φ(x))/dt` is Gaussian with standard deviation
/// `‖∇φᵀσ‖/√dt`, so requiring it to exceed `−ηφ` with probability `1 − ε`
/// tightens the bound by the `(1 − ε)`-quantile times that deviation.
pub fn prsbc_constraint(
    sys: &SdeSystem,
    spec: &BarrierSpec,
    params: &BaselineParams,
    x: &State,
    dt: f64,
) -> Result<LinearConstraint> {
    if dt <= 0.0 {
        return Err(Error::Config(format!("time step {dt} must be positive")));
    }
    let mut c = stocbf_constraint(sys, spec, params.eta, x)?;
    let q = Normal::standard().inverse_cdf(1.0 - params.epsilon_prsbc);
    c.b += q * phi_noise_gain(sys, spec, x)?.norm() / dt.sqrt();
    Ok(c)
}

/// Lower-tail CVaR at level `beta`, in the Rockafellar–Uryasev form
/// `ζ − E[(ζ − Y)⁺]/β` at the empirical `β`-quantile `ζ`.
pub fn empirical_cvar(samples: &[f64], beta: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let k = ((beta * n as f64).ceil() as usize).clamp(1, n);
    let zeta = s[k - 1];
    let shortfall: f64 = s.iter().map(|y| (zeta - y).max(0.0)).sum::<f64>() / n as f64;
    zeta - shortfall / beta
}

/// Outcome of the CVaR barrier filter.
#[derive(Debug, Clone, PartialEq)]
pub struct CvarOutcome {
    pub u: DVector<f64>,
    pub cvar: f64,
    /// `γφ(x)`.
    pub bound: f64,
    pub active: bool,
    pub feasible: bool,
}

/// CVaR of `φ(X_{t+dt})` as a function of the input, with the noise draws
/// shared across inputs.
pub struct CvarBarrier<'a> {
    sys: &'a SdeSystem,
    spec: &'a BarrierSpec,
    params: BaselineParams,
    x: State,
    dt: f64,
    noise: Vec<DVector<f64>>,
}

impl<'a> CvarBarrier<'a> {
    pub fn new(
        sys: &'a SdeSystem,
        spec: &'a BarrierSpec,
        params: &BaselineParams,
        x: &State,
        dt: f64,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        let mut r = rng::rng(seed);
        let sd = dt.sqrt();
        let noise = (0..params.cvar_samples)
            .map(|_| {
                DVector::from_fn(sys.noise_dim(), |_, _| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    sd * z
                })
            })
            .collect();
        Ok(Self {
            sys,
            spec,
            params: params.clone(),
            x: x.clone(),
            dt,
            noise,
        })
    }

    pub fn bound(&self) -> f64 {
        self.params.gamma_cvar * self.spec.phi(&self.x)
    }

    /// Barrier values at the sampled successors under `u`.
    pub fn successor_phi(&self, u: &DVector<f64>) -> Result<Vec<f64>> {
        let mean = &self.x + self.sys.controlled_drift(&self.x, u)? * self.dt;
        let sigma = self.sys.diffusion(&self.x)?;
        Ok(self
            .noise
            .iter()
            .map(|w| self.spec.phi(&(&mean + &sigma * w)))
            .collect())
    }

    pub fn cvar(&self, u: &DVector<f64>) -> Result<f64> {
        Ok(empirical_cvar(
            &self.successor_phi(u)?,
            self.params.beta_cvar,
        ))
    }

    fn margin(&self, u: &DVector<f64>) -> Result<f64> {
        Ok(self.cvar(u)? - self.bound())
    }

    /// Unit ascent direction `∇φᵀg / ‖∇φᵀg‖`, or `None` without input authority.
    fn direction(&self) -> Result<Option<DVector<f64>>> {
        let d = phi_input_gain(self.sys, self.spec, &self.x)?;
        let n = d.norm();
        Ok(if n > 1e-12 { Some(d / n) } else { None })
    }

    /// Smallest move along the ascent direction that meets the bound, found
    /// by bisection; a grid over both directions is the fallback when the
    /// margin is not monotone.
    pub fn filter(&self, nominal: &DVector<f64>) -> Result<CvarOutcome> {
        let bound = self.bound();
        let at = |u: DVector<f64>, active: bool| -> Result<CvarOutcome> {
            let cvar = self.cvar(&u)?;
            Ok(CvarOutcome {
                u,
                cvar,
                bound,
                active,
                feasible: cvar >= bound - self.params.cvar_tol,
            })
        };
        if self.margin(nominal)? >= 0.0 {
            return at(nominal.clone(), false);
        }
        let Some(d) = self.direction()? else {
            log::warn!("CVaR bound unmet and the input cannot move the barrier; holding nominal");
            return at(nominal.clone(), true);
        };
        let along = |s: f64| nominal + &d * s;
        let mut hi = 1.0;
        while self.margin(&along(hi))? < 0.0 {
            hi *= 2.0;
            if hi > 1e6 {
                return self.grid_fallback(nominal, &d);
            }
        }
        let mut lo = 0.0;
        while hi - lo > self.params.cvar_tol {
            let mid = 0.5 * (lo + hi);
            if self.margin(&along(mid))? >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        at(along(hi), true)
    }

    fn grid_fallback(&self, nominal: &DVector<f64>, d: &DVector<f64>) -> Result<CvarOutcome> {
        let mut best: Option<f64> = None;
        for i in -2000..=2000 {
            let s = i as f64 * 0.5;
            if self.margin(&(nominal + d * s))? >= 0.0 && best.is_none_or(|b| s.abs() < b.abs()) {
                best = Some(s);
            }
        }
        match best {
            Some(s) => {
                let u = nominal + d * s;
                Ok(CvarOutcome {
                    cvar: self.cvar(&u)?,
                    u,
                    bound: self.bound(),
                    active: true,
                    feasible: true,
                })
            }
            None => {
                log::warn!("no input meets the CVaR bound; holding nominal");
                Err(Error::CvarInfeasible)
            }
        }
    }

    /// Input along the ascent direction whose CVaR equals the bound.
    pub fn equality_control(&self, start: &DVector<f64>) -> Result<DVector<f64>> {
        let Some(d) = self.direction()? else {
            return Err(Error::DegenerateGradient { norm: 0.0 });
        };
        let along = |s: f64| start + &d * s;
        let m0 = self.margin(start)?;
        if m0 == 0.0 {
            return Ok(start.clone());
        }
        // Bracket the root: move up if below the bound, down otherwise.
        let step = if m0 < 0.0 { 1.0 } else { -1.0 };
        let (mut a, mut b) = (0.0, step);
        while self.margin(&along(b))?.signum() == m0.signum() {
            a = b;
            b *= 2.0;
            if b.abs() > 1e6 {
                return Err(Error::CvarInfeasible);
            }
        }
        while (b - a).abs() > 1e-12 {
            let mid = 0.5 * (a + b);
            let m = self.margin(&along(mid))?;
            if m.abs() <= 0.1 * self.params.cvar_tol {
                return Ok(along(mid));
            }
            if m.signum() == m0.signum() {
                a = mid;
            } else {
                b = mid;
            }
        }
        Ok(along(0.5 * (a + b)))
    }
}

/// The three comparison filters by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Stocbf,
    Prsbc,
    Cvar,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::Stocbf, Baseline::Prsbc, Baseline::Cvar];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Stocbf => "stocbf",
            Baseline::Prsbc => "prsbc",
            Baseline::Cvar => "cvar",
        }
    }
}

/// Common view of a baseline filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineStep {
    pub u: DVector<f64>,
    pub active: bool,
    pub feasible: bool,
}

impl From<FilterOutcome> for BaselineStep {
    fn from(o: FilterOutcome) -> Self {
        Self {
            u: o.u,
            active: o.active,
            feasible: o.feasible,
        }
    }
}

/// Filters `nominal` at `x` with the chosen baseline.
pub fn baseline_filter(
    which: Baseline,
    sys: &SdeSystem,
    spec: &BarrierSpec,
    params: &BaselineParams,
    nominal: &DVector<f64>,
    x: &State,
    dt: f64,
    seed: u64,
) -> Result<BaselineStep> {
    let hold = CertificateParams::default();
    match which {
        Baseline::Stocbf => Ok(stocbf_constraint(sys, spec, params.eta, x)?
            .additive(nominal, &hold)?
            .into()),
        Baseline::Prsbc => Ok(prsbc_constraint(sys, spec, params, x, dt)?
            .additive(nominal, &hold)?
            .into()),
        Baseline::Cvar => {
            let c = CvarBarrier::new(sys, spec, params, x, dt, seed)?;
            match c.filter(nominal) {
                Ok(o) => Ok(BaselineStep {
                    u: o.u,
                    active: o.active,
                    feasible: o.feasible,
                }),
                Err(Error::CvarInfeasible) => Ok(BaselineStep {
                    u: nominal.clone(),
                    active: true,
                    feasible: false,
                }),
                Err(e) => Err(e),
            }
        }
    }
}

/// Input satisfying the baseline's condition with equality.
pub fn baseline_worst_case(
    which: Baseline,
    sys: &SdeSystem,
    spec: &BarrierSpec,
    params: &BaselineParams,
    x: &State,
    dt: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    let p = CertificateParams::default();
    match which {
        Baseline::Stocbf => stocbf_constraint(sys, spec, params.eta, x)?.equality_solution(&p),
        Baseline::Prsbc => prsbc_constraint(sys, spec, params, x, dt)?.equality_solution(&p),
        Baseline::Cvar => CvarBarrier::new(sys, spec, params, x, dt, seed)?
            .equality_control(&DVector::zeros(sys.input_dim())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_stderr;
    use proptest::prelude::*;
    use rand::Rng;
    use statrs::distribution::Continuous;

    fn v(x: f64) -> State {
        DVector::from_element(1, x)
    }

    fn system_one() -> SdeSystem {
        SdeSystem::scalar(|_| 2.0, |_| 1.0, |_| 2.0)
    }

    #[test]
    fn stocbf_examples() {
        let spec = BarrierSpec::scalar_threshold(1.0);
        let c = stocbf_constraint(&system_one(), &spec, 1.0, &v(3.0)).unwrap();
        assert_eq!((c.a[0], c.b), (1.0, -4.0));
        let loud = SdeSystem::scalar(|_| 2.0, |_| 1.0, |_| 9.0);
        assert_eq!(
            stocbf_constraint(&loud, &spec, 1.0, &v(3.0)).unwrap().b,
            -4.0
        );
        let on_boundary = stocbf_constraint(&system_one(), &spec, 1.0, &v(1.0)).unwrap();
        assert_eq!(on_boundary.b, -2.0);
    }

    #[test]
    fn prsbc_examples() {
        let spec = BarrierSpec::scalar_threshold(1.0);
        let sys = system_one();
        let base = stocbf_constraint(&sys, &spec, 1.0, &v(3.0)).unwrap();
        let median = BaselineParams {
            epsilon_prsbc: 0.5,
            ..Default::default()
        };
        assert!(
            (prsbc_constraint(&sys, &spec, &median, &v(3.0), 0.1)
                .unwrap()
                .b
                - base.b)
                .abs()
                < 1e-12
        );
        let p = BaselineParams::default();
        let c = prsbc_constraint(&sys, &spec, &p, &v(3.0), 0.1).unwrap();
        let q = (c.b - base.b) * 0.1f64.sqrt() / 2.0;
        assert!((q - 1.2816).abs() < 1e-4);
        let quiet = SdeSystem::scalar(|_| 2.0, |_| 1.0, |_| 0.0);
        assert_eq!(
            prsbc_constraint(&quiet, &spec, &p, &v(3.0), 0.1).unwrap(),
            stocbf_constraint(&quiet, &spec, 1.0, &v(3.0)).unwrap()
        );
    }

    proptest! {
        #[test]
        fn prsbc_is_never_looser(x in -5.0f64..8.0, s in 0.01f64..4.0, eps in 0.01f64..0.49) {
            let spec = BarrierSpec::scalar_threshold(1.0);
            let sys = SdeSystem::scalar(|_| 2.0, |_| 1.0, move |_| s);
            let p = BaselineParams { epsilon_prsbc: eps, ..Default::default() };
            let pr = prsbc_constraint(&sys, &spec, &p, &v(x), 0.1).unwrap();
            let st = stocbf_constraint(&sys, &spec, p.eta, &v(x)).unwrap();
            prop_assert!(pr.b > st.b);
        }
    }

    #[test]
    fn empirical_cvar_forms() {
        let y: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        assert!((empirical_cvar(&y, 0.2) - 1.5).abs() < 1e-12);
        assert!((empirical_cvar(&y, 1.0) - 5.5).abs() < 1e-12);
        // Deterministic successor.
        let sys = SdeSystem::scalar(|_| 2.0, |_| 1.0, |_| 0.0);
        let spec = BarrierSpec::scalar_threshold(1.0);
        let c = CvarBarrier::new(&sys, &spec, &BaselineParams::default(), &v(3.0), 0.1, 1).unwrap();
        assert!((c.cvar(&v(-1.0)).unwrap() - (3.0 + 0.1 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn full_tail_is_the_mean() {
        let p = BaselineParams {
            beta_cvar: 1.0,
            ..Default::default()
        };
        let spec = BarrierSpec::scalar_threshold(1.0);
        let sys = system_one();
        let c = CvarBarrier::new(&sys, &spec, &p, &v(3.0), 0.1, 2).unwrap();
        let s = c.successor_phi(&v(0.5)).unwrap();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!((c.cvar(&v(0.5)).unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn gaussian_cvar_oracle() {
        let spec = BarrierSpec::scalar_threshold(1.0);
        let sys = system_one();
        let p = BaselineParams::default();
        let u = v(-2.5 * 3.0);
        let c = CvarBarrier::new(&sys, &spec, &p, &v(3.0), 0.1, 5).unwrap();
        let samples = c.successor_phi(&u).unwrap();
        let est = empirical_cvar(&samples, p.beta_cvar);
        let n = Normal::standard();
        let (mu, sd) = (3.0 + (2.0 - 7.5) * 0.1 - 1.0, 2.0 * 0.1f64.sqrt());
        let exact = mu - sd * n.pdf(n.inverse_cdf(p.beta_cvar)) / p.beta_cvar;
        let mut r = rng::rng(99);
        let boots: Vec<f64> = (0..500)
            .map(|_| {
                let re: Vec<f64> = (0..samples.len())
                    .map(|_| samples[r.random_range(0..samples.len())])
                    .collect();
                empirical_cvar(&re, p.beta_cvar)
            })
            .collect();
        let (m, _) = mean_stderr(&boots);
        let se =
            (boots.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (boots.len() - 1) as f64).sqrt();
        assert!((est - exact).abs() < 3.0 * se, "{est} vs {exact} (se {se})");
    }

    #[test]
    fn filters_leave_satisfied_nominals_alone() {
        let spec = BarrierSpec::scalar_threshold(1.0);
        let sys = system_one();
        let p = BaselineParams::default();
        for which in Baseline::ALL {
            let out = baseline_filter(which, &sys, &spec, &p, &v(5.0), &v(6.0), 0.1, 3).unwrap();
            assert_eq!(out.u[0], 5.0);
            assert!(!out.active);
        }
    }

    #[test]
    fn cvar_filter_meets_the_bound() {
        let spec = BarrierSpec::scalar_threshold(1.0);
        let sys = system_one();
        let p = BaselineParams::default();
        let c = CvarBarrier::new(&sys, &spec, &p, &v(2.0), 0.1, 8).unwrap();
        let out = c.filter(&v(-20.0)).unwrap();
        assert!(out.active && out.feasible);
        assert!(out.cvar >= out.bound);
        // Bisection returns the upper end of a bracket narrower than the tolerance.
        let slightly_less = &out.u - v(p.cvar_tol);
        assert!(c.cvar(&slightly_less).unwrap() < out.bound + 1e-3);
    }

    #[test]
    fn worst_case_variants_hold_with_equality() {
        let spec = BarrierSpec::scalar_threshold(1.0);
        let sys = system_one();
        let p = BaselineParams::default();
        for x in [1.5, 3.0, 6.0] {
            for which in [Baseline::Stocbf, Baseline::Prsbc] {
                let u = baseline_worst_case(which, &sys, &spec, &p, &v(x), 0.1, 0).unwrap();
                let c = match which {
                    Baseline::Stocbf => stocbf_constraint(&sys, &spec, p.eta, &v(x)).unwrap(),
                    _ => prsbc_constraint(&sys, &spec, &p, &v(x), 0.1).unwrap(),
                };
                assert!(c.slack(&u).abs() < 1e-9);
            }
            let u = baseline_worst_case(Baseline::Cvar, &sys, &spec, &p, &v(x), 0.1, 4).unwrap();
            let c = CvarBarrier::new(&sys, &spec, &p, &v(x), 0.1, 4).unwrap();
            assert!((c.cvar(&u).unwrap() - c.bound()).abs() <= p.cvar_tol);
        }
    }

    #[test]
    fn no_authority_is_reported() {
        let spec = BarrierSpec::scalar_threshold(1.0);
        let sys = SdeSystem::scalar(|_| -3.0, |_| 0.0, |_| 2.0);
        let p = BaselineParams::default();
        let c = CvarBarrier::new(&sys, &spec, &p, &v(1.2), 0.1, 4).unwrap();
        assert!(matches!(
            c.equality_control(&v(0.0)),
            Err(Error::DegenerateGradient { .. })
        ));
        let out =
            baseline_filter(Baseline::Cvar, &sys, &spec, &p, &v(0.0), &v(1.2), 0.1, 4).unwrap();
        assert!(!out.feasible);
        assert!(BaselineParams {
            cvar_samples: 10,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
