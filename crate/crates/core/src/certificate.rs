//! Probabilistic-invariance safety certificate: the generator of the safety
//! probability along the controlled dynamics, the resulting linear constraint
//! on the input, and the filters that enforce it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::field::{FieldEval, ProbabilityField};
use crate::sde::{
    phi_drift, phi_input_gain, phi_noise_gain, AugmentedState, BarrierSpec, Policy, SdeSystem,
    State,
};

/// Slack used when checking `a·u ≥ b`.
pub const CONSTRAINT_TOL: f64 = 1e-9;

/// How the drift part of `D_F` is obtained from the field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorForm {
    /// `∇F·f̃ + ½ tr(σ̃σ̃ᵀ ∇²F)` from the field's gradient and Hessian.
    #[default]
    Direct,
    /// Uses that a field tabulated under a reference policy `N_f` solves the
    /// backward equation `∂_T F = ∇F·(f̃ + g̃N_f) + ½ tr(σ̃σ̃ᵀ ∇²F)`, so the drift
    /// and diffusion terms are replaced by `∂_T F − ∇F·g̃N_f`. This avoids the
    /// Hessian of a Monte Carlo field but needs a horizon axis.
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibilityPolicy {
    /// Apply the nominal input and report the exposed risk.
    #[default]
    HoldNominal,
    /// Push along the ascent direction by `max_correction`.
    MaxAscent,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertificateParams {
    /// Gain of the linear class function `α(y) = alpha_gain·y`.
    pub alpha_gain: f64,
    pub epsilon: f64,
    pub infeasibility: InfeasibilityPolicy,
    pub generator: GeneratorForm,
    /// Drop the `½ tr(σ̃σ̃ᵀ ∇²F)` term of the direct form.
    pub drop_hessian: bool,
    /// `‖a‖` at or below this is treated as a vanishing input gain.
    pub degeneracy_tol: f64,
    /// Step length of the `MaxAscent` fallback.
    pub max_correction: f64,
}

impl Default for CertificateParams {
    fn default() -> Self {
        Self {
            alpha_gain: 1.0,
            epsilon: 0.1,
            infeasibility: InfeasibilityPolicy::HoldNominal,
            generator: GeneratorForm::Direct,
            drop_hessian: false,
            degeneracy_tol: 1e-8,
            max_correction: 10.0,
        }
    }
}

impl CertificateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_gain > 0.0) {
            return Err(Error::Config(format!(
                "alpha gain {} must be positive",
                self.alpha_gain
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon {} must lie in (0, 1)",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn alpha(&self, y: f64) -> f64 {
        self.alpha_gain * y
    }

    /// Right-hand side `−α(F − (1 − ε))` of the safety condition.
    pub fn condition_bound(&self, value: f64) -> f64 {
        -self.alpha(value - (1.0 - self.epsilon))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMeta {
    pub value: f64,
    /// `‖∇F‖` over the augmented coordinates.
    pub grad_norm: f64,
    /// Input-independent part of `D_F`.
    pub drift: f64,
}

/// The half-space `{u : a·u ≥ b}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub a: DVector<f64>,
    pub b: f64,
    pub meta: ConstraintMeta,
}

/// Result of filtering one nominal input.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub u: DVector<f64>,
    pub constraint: LinearConstraint,
    /// Multiplier on the correction direction; zero when inactive.
    pub kappa: f64,
    /// The nominal input violated the constraint.
    pub active: bool,
    /// The output satisfies the constraint.
    pub feasible: bool,
    /// `b − a·u` at the output when it is infeasible, else zero.
    pub exposed_risk: f64,
}

impl LinearConstraint {
    pub fn new(a: DVector<f64>, b: f64) -> Self {
        Self {
            a,
            b,
            meta: ConstraintMeta::default(),
        }
    }

    /// `a·u − b`.
    pub fn slack(&self, u: &DVector<f64>) -> f64 {
        self.a.dot(u) - self.b
    }

    pub fn satisfied(&self, u: &DVector<f64>) -> bool {
        self.slack(u) >= -CONSTRAINT_TOL
    }

    fn outcome(&self, u: DVector<f64>, kappa: f64, active: bool) -> FilterOutcome {
        let slack = self.slack(&u);
        FilterOutcome {
            u,
            constraint: self.clone(),
            kappa,
            active,
            feasible: slack >= -CONSTRAINT_TOL,
            exposed_risk: (-slack).max(0.0),
        }
    }

    fn infeasible(
        &self,
        nominal: &DVector<f64>,
        params: &CertificateParams,
    ) -> Result<FilterOutcome> {
        let exposed_risk = self.b - self.a.dot(nominal);
        match params.infeasibility {
            InfeasibilityPolicy::Error => Err(Error::Infeasible { exposed_risk }),
            InfeasibilityPolicy::HoldNominal => {
                log::warn!("safety constraint infeasible, holding nominal input (exposed risk {exposed_risk:.3e})");
                Ok(self.outcome(nominal.clone(), 0.0, true))
            }
            InfeasibilityPolicy::MaxAscent => {
                let norm = self.a.norm();
                if norm == 0.0 {
                    return Ok(self.outcome(nominal.clone(), 0.0, true));
                }
                let kappa = params.max_correction / norm;
                Ok(self.outcome(nominal + &self.a * kappa, kappa, true))
            }
        }
    }

    /// Smallest `κ ≥ 0` with `a·(n + κaᵀ) ≥ b`, i.e. the Euclidean projection
    /// of the nominal input onto the half-space.
    pub fn additive(
        &self,
        nominal: &DVector<f64>,
        params: &CertificateParams,
    ) -> Result<FilterOutcome> {
        self.weighted_projection(nominal, None, params)
    }

    /// Minimiser of `(u − n)ᵀH(u − n)` over the half-space; `None` means
    /// `H = I`.
    pub fn weighted_projection(
        &self,
        nominal: &DVector<f64>,
        weight: Option<&DMatrix<f64>>,
        params: &CertificateParams,
    ) -> Result<FilterOutcome> {
        if self.a.len() != nominal.len() {
            return Err(Error::Dimension {
                what: "nominal input",
                expected: self.a.len().to_string(),
                got: nominal.len().to_string(),
            });
        }
        if self.satisfied(nominal) {
            return Ok(self.outcome(nominal.clone(), 0.0, false));
        }
        let gap = self.b - self.a.dot(nominal);
        if self.a.norm() <= params.degeneracy_tol {
            return self.infeasible(nominal, params);
        }
        let direction = match weight {
            None => self.a.clone(),
            Some(h) => h
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Config("input weight must be positive definite".into()))?
                .solve(&self.a),
        };
        let kappa = gap / self.a.dot(&direction);
        let mut u = nominal + &direction * kappa;
        // Round-off can leave the projection a hair inside the boundary.
        let slack = self.slack(&u);
        if slack < 0.0 {
            u += &direction * (-slack / self.a.dot(&direction));
        }
        Ok(self.outcome(u, kappa, true))
    }

    /// Minimum-norm solution of `a·u = b`.
    pub fn equality_solution(&self, params: &CertificateParams) -> Result<DVector<f64>> {
        let norm = self.a.norm();
        if norm <= params.degeneracy_tol {
            return Err(Error::DegenerateGradient { norm });
        }
        Ok(&self.a * (self.b / (norm * norm)))
    }
}

/// Candidate grid for the one-step predictive filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    /// Half-width of the per-axis grid, centred on the nominal input.
    pub half_width: f64,
    pub points_per_axis: usize,
    pub dt: f64,
    /// Factor applied to the half-width on the single retry.
    pub extension: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            half_width: 10.0,
            points_per_axis: 401,
            dt: 0.1,
            extension: 4.0,
        }
    }
}

/// A field bound to its system, barrier and parameters.
pub struct Certificate<'a> {
    field: &'a dyn ProbabilityField,
    sys: &'a SdeSystem,
    spec: &'a BarrierSpec,
    params: CertificateParams,
    reference: Option<&'a dyn Policy>,
}

impl<'a> Certificate<'a> {
    pub fn new(
        field: &'a dyn ProbabilityField,
        sys: &'a SdeSystem,
        spec: &'a BarrierSpec,
        params: CertificateParams,
    ) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            field,
            sys,
            spec,
            params,
            reference: None,
        })
    }

    /// Policy the field was tabulated under, used by the backward form.
    /// Defaults to zero input.
    pub fn with_reference(mut self, policy: &'a dyn Policy) -> Self {
        self.reference = Some(policy);
        self
    }

    pub fn params(&self) -> &CertificateParams {
        &self.params
    }

    /// Whether `F(z) > 1 − ε`, the starting condition under which the
    /// certificate guarantees `E[F] ≥ 1 − ε`.
    pub fn precondition_holds(&self, z: &AugmentedState) -> Result<bool> {
        Ok(self.field.evaluate(z)?.value > 1.0 - self.params.epsilon)
    }

    /// Input gain `g̃ᵀ∇F` and the input-free part of `D_F`.
    fn generator_parts(&self, z: &AugmentedState) -> Result<(FieldEval, DVector<f64>, f64)> {
        let x = &z.x;
        let n = x.len();
        let eval = self.field.evaluate(z)?;
        if eval.grad.len() != n + 3 {
            return Err(Error::Dimension {
                what: "field gradient",
                expected: (n + 3).to_string(),
                got: eval.grad.len().to_string(),
            });
        }
        let g = self.sys.input_matrix(x)?;
        let lg_phi = phi_input_gain(self.sys, self.spec, x)?;
        let grad_x = eval.grad.rows(3, n);
        let gain = lg_phi * eval.grad[2] + g.transpose() * grad_x;
        let f_t = self.spec.horizon_rate();
        let f_l = self.spec.margin_rate(z.margin);
        let drift = match self.params.generator {
            GeneratorForm::Direct => {
                let f = self.sys.drift(x)?;
                let mut d = f_t * eval.grad[0]
                    + f_l * eval.grad[1]
                    + phi_drift(self.sys, self.spec, x)? * eval.grad[2]
                    + grad_x.dot(&f);
                if !self.params.drop_hessian {
                    let s = self.sys.diffusion(x)?;
                    let mut sig = DMatrix::zeros(n + 3, s.ncols());
                    sig.row_mut(2)
                        .copy_from(&phi_noise_gain(self.sys, self.spec, x)?.transpose());
                    sig.rows_mut(3, n).copy_from(&s);
                    d += 0.5 * (&sig * sig.transpose()).component_mul(&eval.hess).sum();
                }
                d
            }
            GeneratorForm::Backward => {
                let reference = match self.reference {
                    Some(p) => p.act(0.0, x),
                    None => DVector::zeros(self.sys.input_dim()),
                };
                (f_t + 1.0) * eval.grad[0] + f_l * eval.grad[1] - gain.dot(&reference)
            }
        };
        Ok((eval, gain, drift))
    }

    /// `D_F(z, u)`, the rate of change of the safety probability.
    pub fn d_f(&self, z: &AugmentedState, u: &DVector<f64>) -> Result<f64> {
        let (_, gain, drift) = self.generator_parts(z)?;
        if gain.len() != u.len() {
            return Err(Error::Dimension {
                what: "input",
                expected: gain.len().to_string(),
                got: u.len().to_string(),
            });
        }
        Ok(drift + gain.dot(u))
    }

    /// `{u : D_F(z, u) ≥ −α(F(z) − (1 − ε))}` as `a·u ≥ b`.
    pub fn safety_constraint(&self, z: &AugmentedState) -> Result<LinearConstraint> {
        let (eval, a, drift) = self.generator_parts(z)?;
        Ok(LinearConstraint {
            b: self.params.condition_bound(eval.value) - drift,
            meta: ConstraintMeta {
                value: eval.value,
                grad_norm: eval.grad.norm(),
                drift,
            },
            a,
        })
    }

    /// Nominal input plus the least multiple of `(∇F·g̃)ᵀ` meeting the
    /// constraint.
    pub fn additive_filter(
        &self,
        nominal: &DVector<f64>,
        z: &AugmentedState,
    ) -> Result<FilterOutcome> {
        self.safety_constraint(z)?.additive(nominal, &self.params)
    }

    /// Projection of the nominal input under the cost `(u − n)ᵀH(u − n)`.
    pub fn qp_filter(
        &self,
        nominal: &DVector<f64>,
        weight: Option<&DMatrix<f64>>,
        z: &AugmentedState,
    ) -> Result<FilterOutcome> {
        self.safety_constraint(z)?
            .weighted_projection(nominal, weight, &self.params)
    }

    /// One-step predictive filter: minimises `cost(mean next state, u)` over a
    /// grid of inputs satisfying the constraint. Only the current step is
    /// constrained; longer horizons would add constraints at predicted states.
    pub fn mpc_filter(
        &self,
        cost: &dyn Fn(&State, &DVector<f64>) -> f64,
        nominal: &DVector<f64>,
        z: &AugmentedState,
        cfg: &MpcConfig,
    ) -> Result<FilterOutcome> {
        let c = self.safety_constraint(z)?;
        if c.satisfied(nominal) && c.a.norm() <= self.params.degeneracy_tol {
            return Ok(c.outcome(nominal.clone(), 0.0, false));
        }
        if !c.satisfied(nominal) && c.a.norm() <= self.params.degeneracy_tol {
            return c.infeasible(nominal, &self.params);
        }
        let m = nominal.len();
        let drift = self.sys.drift(&z.x)?;
        let g = self.sys.input_matrix(&z.x)?;
        let mut half = cfg.half_width;
        for _ in 0..2 {
            let mut best: Option<(f64, DVector<f64>)> = None;
            let k = cfg.points_per_axis.max(2);
            let total = k.pow(m as u32);
            for mut code in 0..total {
                let mut u = nominal.clone();
                for j in 0..m {
                    let i = code % k;
                    code /= k;
                    u[j] += -half + 2.0 * half * i as f64 / (k - 1) as f64;
                }
                if !c.satisfied(&u) {
                    continue;
                }
                let next = &z.x + (&drift + &g * &u) * cfg.dt;
                let j = cost(&next, &u);
                if best.as_ref().is_none_or(|b| j < b.0) {
                    best = Some((j, u));
                }
            }
            if let Some((_, u)) = best {
                let active = !c.satisfied(nominal);
                return Ok(c.outcome(u, 0.0, active));
            }
            half *= cfg.extension;
        }
        Err(Error::EmptyCandidateSet)
    }

    /// Input meeting the safety condition with equality, of minimum norm.
    pub fn worst_case_control(&self, z: &AugmentedState) -> Result<DVector<f64>> {
        self.safety_constraint(z)?.equality_solution(&self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::field::AnalyticField;
    use crate::estimation::interp::InterpOrder;
    use crate::estimation::mc::{tabulate_mc, TabulateConfig};
    use crate::rng;
    use crate::sde::{HorizonMode, NoiseSource, ZeroPolicy};
    use proptest::prelude::*;
    use rand::Rng;

    fn v(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn system_one() -> SdeSystem {
        SdeSystem::scalar(|_| 2.0, |_| 1.0, |_| 2.0)
    }

    fn z_at(x: f64, spec: &BarrierSpec) -> AugmentedState {
        AugmentedState::new(spec.horizon, 0.0, v(x), spec)
    }

    /// `F = c0 + c1·x + c2·x²` in the state coordinate only.
    fn quadratic_field(c0: f64, c1: f64, c2: f64) -> AnalyticField {
        AnalyticField::new(move |z| {
            let x = z.x[0];
            let mut e = FieldEval::constant(c0 + c1 * x + c2 * x * x, 4);
            e.grad[3] = c1 + 2.0 * c2 * x;
            e.hess[(3, 3)] = 2.0 * c2;
            e
        })
    }

    fn sigmoid_field() -> AnalyticField {
        AnalyticField::new(|z| {
            let s = 1.0 / (1.0 + (-(z.x[0] - 2.0)).exp());
            let mut e = FieldEval::constant(s, 4);
            e.grad[3] = s * (1.0 - s);
            e.hess[(3, 3)] = s * (1.0 - s) * (1.0 - 2.0 * s);
            e
        })
    }

    #[test]
    fn constant_field_has_zero_generator() {
        let sys = system_one();
        let spec = BarrierSpec::scalar_threshold(1.0);
        let f = AnalyticField::new(|_| FieldEval::constant(0.7, 4));
        let c = Certificate::new(&f, &sys, &spec, CertificateParams::default()).unwrap();
        for u in [-5.0, 0.0, 3.3] {
            assert_eq!(c.d_f(&z_at(2.0, &spec), &v(u)).unwrap(), 0.0);
        }
    }

    #[test]
    fn linear_in_phi_field_follows_the_chain_rule() {
        let sys = SdeSystem::scalar(|x: f64| -x.sin(), |x| 1.0 + x * x, |_| 0.7);
        // φ = x² − 1 so the Itô term of φ is non-zero.
        let spec = BarrierSpec::new(
            |x| x[0] * x[0] - 1.0,
            |x| v(2.0 * x[0]),
            |_| DMatrix::from_element(1, 1, 2.0),
        );
        let s = 0.3;
        let f = AnalyticField::new(move |z| {
            let mut e = FieldEval::constant(0.5 + s * z.phi, 4);
            e.grad[2] = s;
            e
        });
        let c = Certificate::new(&f, &sys, &spec, CertificateParams::default()).unwrap();
        let x = v(1.4);
        let z = z_at(1.4, &spec);
        for u in [-2.0, 0.5] {
            let expected = s
                * (phi_drift(&sys, &spec, &x).unwrap()
                    + phi_input_gain(&sys, &spec, &x).unwrap()[0] * u);
            assert!((c.d_f(&z, &v(u)).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn tabulated_field_generator_is_affine_in_input() {
        let sys = system_one();
        let spec = BarrierSpec::scalar_threshold(1.0).with_horizon(HorizonMode::Fixed, 2.0);
        let cfg = TabulateConfig {
            state_axes: vec![(0..=40).map(|i| 0.8 + 0.1 * i as f64).collect()],
            horizons: None,
            margins: None,
            samples: 400,
            dt: 0.1,
            seed: 3,
            order: InterpOrder::Cubic,
        };
        let field = tabulate_mc(&sys, &spec, &ZeroPolicy(1), &cfg, "zero").unwrap();
        let c = Certificate::new(&field, &sys, &spec, CertificateParams::default()).unwrap();
        let z = z_at(2.37, &spec);
        let us: Vec<f64> = (0..21).map(|i| -5.0 + 0.5 * i as f64).collect();
        let ds: Vec<f64> = us.iter().map(|&u| c.d_f(&z, &v(u)).unwrap()).collect();
        // Least-squares line through (u, D_F).
        let n = us.len() as f64;
        let (mu, md) = (us.iter().sum::<f64>() / n, ds.iter().sum::<f64>() / n);
        let sxy: f64 = us.iter().zip(&ds).map(|(u, d)| (u - mu) * (d - md)).sum();
        let sxx: f64 = us.iter().map(|u| (u - mu).powi(2)).sum();
        let slope = sxy / sxx;
        let resid = us
            .iter()
            .zip(&ds)
            .map(|(u, d)| (d - (md + slope * (u - mu))).abs())
            .fold(0.0, f64::max);
        assert!(resid < 1e-9);
        let gain = c.safety_constraint(&z).unwrap().a[0];
        assert!((slope - gain).abs() < 1e-9 * (1.0 + gain.abs()));
    }

    #[test]
    fn constraint_on_probability_boundary() {
        // No drift or noise and F = 1 − ε exactly.
        let sys = SdeSystem::scalar(|_| 0.0, |_| 1.0, |_| 0.0);
        let spec = BarrierSpec::scalar_threshold(1.0);
        let f = quadratic_field(0.9 - 0.2 * 3.0, 0.2, 0.0);
        let c = Certificate::new(&f, &sys, &spec, CertificateParams::default()).unwrap();
        let k = c.safety_constraint(&z_at(3.0, &spec)).unwrap();
        assert!(k.b.abs() < 1e-12);
        assert!((k.a[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn far_from_risk_the_nominal_is_feasible() {
        let sys = system_one();
        let spec = BarrierSpec::scalar_threshold(1.0);
        let f = sigmoid_field();
        let params = CertificateParams {
            alpha_gain: 100.0,
            ..Default::default()
        };
        let c = Certificate::new(&f, &sys, &spec, params).unwrap();
        let z = z_at(8.0, &spec);
        let k = c.safety_constraint(&z).unwrap();
        // α(F − 0.9) ≈ 100·0.0975 dominates the small drift terms.
        assert!(k.b < -9.0);
        let nominal = v(-2.5 * 8.0);
        let out = c.additive_filter(&nominal, &z).unwrap();
        assert_eq!(out.u, nominal);
        assert!(!out.active);
    }

    #[test]
    fn additive_closed_form() {
        let k = LinearConstraint::new(v(1.0), 2.0);
        let p = CertificateParams::default();
        let out = k.additive(&v(0.0), &p).unwrap();
        assert_eq!(out.u[0], 2.0);
        assert_eq!(out.kappa, 2.0);
        let out = k.additive(&v(5.0), &p).unwrap();
        assert_eq!((out.u[0], out.kappa, out.active), (5.0, 0.0, false));
    }

    #[test]
    fn projection_matches_grid_search() {
        let k = LinearConstraint::new(v(2.0), 4.0);
        let p = CertificateParams::default();
        let out = k.weighted_projection(&v(0.0), None, &p).unwrap();
        assert_eq!(out.u[0], 2.0);
        assert_eq!(k.slack(&out.u), 0.0);
        let best = (0..=100_000)
            .map(|i| -10.0 + 2e-4 * i as f64)
            .filter(|u| 2.0 * u >= 4.0)
            .min_by(|a, b| (a * a).partial_cmp(&(b * b)).unwrap())
            .unwrap();
        assert!((best - out.u[0]).abs() < 2e-4);
        let h = DMatrix::from_element(1, 1, 4.0);
        let out = LinearConstraint::new(v(1.0), 1.0)
            .weighted_projection(&v(0.0), Some(&h), &p)
            .unwrap();
        assert!((out.u[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_projection_in_two_dimensions() {
        // min (u−n)ᵀH(u−n) s.t. a·u ≥ b; KKT: u = n + λH⁻¹a.
        let k = LinearConstraint::new(DVector::from_vec(vec![1.0, 2.0]), 3.0);
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 8.0]);
        let out = k
            .weighted_projection(&DVector::zeros(2), Some(&h), &CertificateParams::default())
            .unwrap();
        // H⁻¹a = (0.5, 0.25), a·H⁻¹a = 1, λ = 3.
        assert!((out.u[0] - 1.5).abs() < 1e-12 && (out.u[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn degenerate_gain_follows_policy() {
        let k = LinearConstraint::new(v(0.0), 0.5);
        let hold = k.additive(&v(1.0), &CertificateParams::default()).unwrap();
        assert_eq!(hold.u[0], 1.0);
        assert!(!hold.feasible && hold.exposed_risk == 0.5);
        let err = CertificateParams {
            infeasibility: InfeasibilityPolicy::Error,
            ..Default::default()
        };
        assert_eq!(
            k.additive(&v(1.0), &err),
            Err(Error::Infeasible { exposed_risk: 0.5 })
        );
        let k = LinearConstraint::new(v(1e-10), 0.5);
        let ascent = CertificateParams {
            infeasibility: InfeasibilityPolicy::MaxAscent,
            ..Default::default()
        };
        assert!((k.additive(&v(0.0), &ascent).unwrap().u[0] - 10.0).abs() < 1e-12);
        assert_eq!(
            k.equality_solution(&CertificateParams::default()),
            Err(Error::DegenerateGradient { norm: 1e-10 })
        );
    }

    #[test]
    fn worst_case_examples() {
        let p = CertificateParams::default();
        assert_eq!(
            LinearConstraint::new(v(1.0), -3.0)
                .equality_solution(&p)
                .unwrap()[0],
            -3.0
        );
        assert_eq!(
            LinearConstraint::new(v(2.0), 0.0)
                .equality_solution(&p)
                .unwrap()[0],
            0.0
        );
        let sys = system_one();
        let spec = BarrierSpec::scalar_threshold(1.0);
        let f = sigmoid_field();
        let c = Certificate::new(&f, &sys, &spec, p.clone()).unwrap();
        for x in [1.2, 2.0, 3.5] {
            let z = z_at(x, &spec);
            let u = c.worst_case_control(&z).unwrap();
            let value = f.evaluate(&z).unwrap().value;
            let residual = c.d_f(&z, &u).unwrap() - p.condition_bound(value);
            assert!(residual.abs() < 1e-9);
        }
    }

    #[test]
    fn mpc_filter_cases() {
        let sys = system_one();
        let spec = BarrierSpec::scalar_threshold(1.0);
        let f = sigmoid_field();
        let c = Certificate::new(&f, &sys, &spec, CertificateParams::default()).unwrap();
        let z = z_at(1.5, &spec);
        let nominal = v(-6.0);
        let cfg = MpcConfig::default();
        let step = 2.0 * cfg.half_width / (cfg.points_per_axis - 1) as f64;
        let quad = |_: &State, u: &DVector<f64>| (u - &nominal).norm_squared();
        let mpc = c.mpc_filter(&quad, &nominal, &z, &cfg).unwrap();
        let qp = c.qp_filter(&nominal, None, &z).unwrap();
        assert!(qp.active);
        assert!((mpc.u[0] - qp.u[0]).abs() <= step);
        // A cost rising in u picks the smallest feasible candidate.
        let linear = |_: &State, u: &DVector<f64>| u[0];
        let lin = c.mpc_filter(&linear, &nominal, &z, &cfg).unwrap();
        let b = lin.constraint.b / lin.constraint.a[0];
        assert!(lin.u[0] >= b - 1e-9 && lin.u[0] - b <= step);
        // A far-away feasible set forces the single grid extension.
        let narrow = MpcConfig {
            half_width: 0.5,
            points_per_axis: 11,
            extension: 1000.0,
            ..cfg.clone()
        };
        assert!(
            c.mpc_filter(&quad, &v(-50.0), &z, &narrow)
                .unwrap()
                .feasible
        );
        let no_ext = MpcConfig {
            extension: 1.0,
            ..narrow
        };
        assert_eq!(
            c.mpc_filter(&quad, &v(-50.0), &z, &no_ext),
            Err(Error::EmptyCandidateSet)
        );
        // Vanishing gain under the default policy holds the nominal.
        let flat = AnalyticField::new(|_| FieldEval::constant(0.5, 4));
        let c = Certificate::new(&flat, &sys, &spec, CertificateParams::default()).unwrap();
        let out = c.mpc_filter(&quad, &nominal, &z, &cfg).unwrap();
        assert_eq!(out.u, nominal);
        assert!(out.exposed_risk > 0.0);
    }

    #[test]
    fn backward_form_uses_horizon_slope_and_reference_policy() {
        let sys = system_one();
        let spec = BarrierSpec::scalar_threshold(1.0);
        let f = AnalyticField::new(|_| {
            let mut e = FieldEval::constant(0.5, 4);
            e.grad[0] = -0.2;
            e.grad[3] = 0.4;
            e
        });
        let params = CertificateParams {
            generator: GeneratorForm::Backward,
            ..Default::default()
        };
        let reference = |x: &State| x * -1.0;
        let c = Certificate::new(&f, &sys, &spec, params)
            .unwrap()
            .with_reference(&reference);
        let z = z_at(2.0, &spec);
        // Fixed horizon: D_F = ∂_T F + ∇F·g̃(u − N_f(x)).
        let d = c.d_f(&z, &v(1.0)).unwrap();
        assert!((d - (-0.2 + 0.4 * (1.0 + 2.0))).abs() < 1e-12);
    }

    #[test]
    fn backward_form_matches_direct_form_for_a_kolmogorov_solution() {
        // Survival of x + 2t + 2W above 1 solves ∂_T F = 2F_x + 2F_xx.
        let surv = |x: f64, t: f64| -> (f64, f64, f64, f64) {
            use statrs::distribution::{ContinuousCDF, Normal};
            let n = Normal::standard();
            let (a, mu, s2) = (x - 1.0, 2.0, 4.0);
            let h = 1e-5;
            let f = |a: f64, t: f64| {
                let s = (s2 * t).sqrt();
                n.cdf((a + mu * t) / s) - (-2.0 * mu * a / s2).exp() * n.cdf((-a + mu * t) / s)
            };
            let v = f(a, t);
            let fx = (f(a + h, t) - f(a - h, t)) / (2.0 * h);
            let fxx = (f(a + h, t) - 2.0 * v + f(a - h, t)) / (h * h);
            let ft = (f(a, t + h) - f(a, t - h)) / (2.0 * h);
            (v, fx, fxx, ft)
        };
        let field = AnalyticField::new(move |z| {
            let (v, fx, fxx, ft) = surv(z.x[0], z.horizon);
            let mut e = FieldEval::constant(v, 4);
            e.grad[0] = ft;
            e.grad[3] = fx;
            e.hess[(3, 3)] = fxx;
            e
        });
        let sys = system_one();
        let spec = BarrierSpec::scalar_threshold(1.0).with_horizon(HorizonMode::Fixed, 1.0);
        let direct = Certificate::new(&field, &sys, &spec, CertificateParams::default()).unwrap();
        let backward = Certificate::new(
            &field,
            &sys,
            &spec,
            CertificateParams {
                generator: GeneratorForm::Backward,
                ..Default::default()
            },
        )
        .unwrap();
        for x in [1.5, 2.0, 3.0] {
            let z = z_at(x, &spec);
            let (a, b) = (
                direct.d_f(&z, &v(0.7)).unwrap(),
                backward.d_f(&z, &v(0.7)).unwrap(),
            );
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn dynkin_slope_matches_mean_generator() {
        // Along closed-loop paths E[F(X_{t+h})] − E[F(X_t)] = E ∫ D_F ds.
        let sys = system_one();
        let spec = BarrierSpec::scalar_threshold(1.0);
        let field = sigmoid_field();
        let c = Certificate::new(&field, &sys, &spec, CertificateParams::default()).unwrap();
        let policy = |x: &State| x * -0.8;
        let (dt, window, probes, paths): (f64, f64, usize, usize) = (0.002, 0.2, 10, 4000);
        let steps = (window / dt).round() as usize;
        let mut diffs = vec![Vec::with_capacity(paths); probes];
        for i in 0..paths {
            let mut noise = NoiseSource::new(rng::split(17, i as u64), dt, 1);
            let mut x = v(3.0);
            for d in diffs.iter_mut() {
                let z0 = z_at(x[0], &spec);
                let f0 = field.evaluate(&z0).unwrap().value;
                let mut integral = 0.0;
                for _ in 0..steps {
                    let z = z_at(x[0], &spec);
                    let u = policy(&x);
                    integral += c.d_f(&z, &u).unwrap() * dt;
                    x = crate::sde::em_step(&sys, &x, &u, dt, &noise.next_increment()).unwrap();
                }
                let f1 = field.evaluate(&z_at(x[0], &spec)).unwrap().value;
                d.push((f1 - f0 - integral) / window);
            }
        }
        for d in &diffs {
            let (m, se) = crate::stats::mean_stderr(d);
            assert!(m.abs() < 3.0 * se, "{m} ± {se}");
        }
    }

    fn random_certificate(seed: u64) -> (AnalyticField, SdeSystem, f64, f64, f64) {
        let mut r = rng::rng(seed);
        let (c0, c1, c2): (f64, f64, f64) = (
            r.random_range(0.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-0.5..0.5),
        );
        let (f, g, s): (f64, f64, f64) = (
            r.random_range(-3.0..3.0),
            r.random_range(-2.0..2.0),
            r.random_range(0.0..3.0),
        );
        let x = r.random_range(-2.0..4.0);
        let u = r.random_range(-5.0..5.0);
        let alpha = r.random_range(0.1..5.0);
        (
            quadratic_field(c0, c1, c2),
            SdeSystem::scalar(move |_| f, move |_| g, move |_| s),
            x,
            u,
            alpha,
        )
    }

    #[test]
    fn constraint_is_equivalent_to_the_condition() {
        let spec = BarrierSpec::scalar_threshold(1.0);
        let mut mismatches = 0;
        for i in 0..10_000 {
            let (field, sys, x, u, alpha) = random_certificate(i);
            let params = CertificateParams {
                alpha_gain: alpha,
                ..Default::default()
            };
            let c = Certificate::new(&field, &sys, &spec, params.clone()).unwrap();
            let z = z_at(x, &spec);
            let k = c.safety_constraint(&z).unwrap();
            let lhs = k.a.dot(&v(u)) - k.b;
            let rhs = c.d_f(&z, &v(u)).unwrap()
                - params.condition_bound(field.evaluate(&z).unwrap().value);
            if (lhs >= 0.0) != (rhs >= 0.0) && lhs.abs().max(rhs.abs()) > 1e-9 {
                mismatches += 1;
            }
        }
        assert_eq!(mismatches, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn filter_output_is_feasible_and_idempotent(
            a in -5.0f64..5.0, b in -5.0f64..5.0, n in -10.0f64..10.0
        ) {
            prop_assume!(a.abs() > 1e-8);
            let k = LinearConstraint::new(v(a), b);
            let p = CertificateParams::default();
            let out = k.additive(&v(n), &p).unwrap();
            prop_assert!(k.a.dot(&out.u) >= b - 1e-9);
            prop_assert!(out.kappa >= 0.0);
            let again = k.additive(&out.u, &p).unwrap();
            prop_assert_eq!(again.u, out.u.clone());
            let qp = k.weighted_projection(&v(n), None, &p).unwrap();
            prop_assert_eq!(qp.u, out.u);
        }
    }

    #[test]
    fn filtering_never_lowers_the_generator() {
        let spec = BarrierSpec::scalar_threshold(1.0);
        for i in 0..2000 {
            let (field, sys, x, u, alpha) = random_certificate(10_000 + i);
            let params = CertificateParams {
                alpha_gain: alpha,
                ..Default::default()
            };
            let c = Certificate::new(&field, &sys, &spec, params).unwrap();
            let z = z_at(x, &spec);
            let out = c.additive_filter(&v(u), &z).unwrap();
            let correction = &out.u - v(u);
            assert!(correction[0] * out.constraint.a[0] >= -1e-12);
            assert!(c.d_f(&z, &out.u).unwrap() >= c.d_f(&z, &v(u)).unwrap() - 1e-12);
        }
    }

    #[test]
    fn precondition_is_reported() {
        let sys = system_one();
        let spec = BarrierSpec::scalar_threshold(1.0);
        let f = sigmoid_field();
        let c = Certificate::new(&f, &sys, &spec, CertificateParams::default()).unwrap();
        assert!(c.precondition_holds(&z_at(6.0, &spec)).unwrap());
        assert!(!c.precondition_holds(&z_at(2.0, &spec)).unwrap());
        assert!(Certificate::new(
            &f,
            &sys,
            &spec,
            CertificateParams {
                epsilon: 1.5,
                ..Default::default()
            }
        )
        .is_err());
    }
}
