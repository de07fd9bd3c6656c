//! One-step transition kernels used by the dynamic-programming estimator.

use crate::error::{Error, Result};
use crate::sde::{SdeSystem, State};
use nalgebra::DVector;

/// A Markov kernel `Q(dy | x, u)` represented by finitely many weighted
/// successors.
pub trait TransitionModel: Send + Sync {
    fn state_dim(&self) -> usize;

    /// Successor states with probabilities summing to one.
    fn successors(&self, x: &State, u: &DVector<f64>) -> Result<Vec<(State, f64)>>;

    /// `E[v(Y)]` for `Y ~ Q(· | x, u)`.
    fn expectation(&self, x: &State, u: &DVector<f64>, v: &dyn Fn(&State) -> f64) -> Result<f64> {
        Ok(self.successors(x, u)?.iter().map(|(y, p)| p * v(y)).sum())
    }
}

/// Scalar integer chain `x' = clip(x + u + w, lo, hi)` with a finite noise law.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeChain {
    pub lo: i64,
    pub hi: i64,
    /// `(offset, probability)` pairs.
    pub noise: Vec<(i64, f64)>,
}

impl LatticeChain {
    pub fn new(lo: i64, hi: i64, noise: Vec<(i64, f64)>) -> Result<Self> {
        if lo >= hi {
            return Err(Error::Config(format!("empty chain range [{lo}, {hi}]")));
        }
        let total: f64 = noise.iter().map(|n| n.1).sum();
        if noise.iter().any(|n| n.1 < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("noise law sums to {total}")));
        }
        Ok(Self { lo, hi, noise })
    }

    /// Noise on `{−1, 0, +1}` with `P(±1) = p` each.
    pub fn symmetric(lo: i64, hi: i64, p: f64) -> Result<Self> {
        Self::new(lo, hi, vec![(-1, p), (0, 1.0 - 2.0 * p), (1, p)])
    }

    pub fn states(&self) -> Vec<i64> {
        (self.lo..=self.hi).collect()
    }

    pub fn clip(&self, x: i64) -> i64 {
        x.clamp(self.lo, self.hi)
    }

    /// Transition row from `x` under `u`, merged over coinciding successors.
    pub fn row(&self, x: i64, u: i64) -> Vec<(i64, f64)> {
        let mut out: Vec<(i64, f64)> = Vec::with_capacity(self.noise.len());
        for &(w, p) in &self.noise {
            let y = self.clip(x + u + w);
            match out.iter_mut().find(|e| e.0 == y) {
                Some(e) => e.1 += p,
                None => out.push((y, p)),
            }
        }
        out
    }
}

impl TransitionModel for LatticeChain {
    fn state_dim(&self) -> usize {
        1
    }

    fn successors(&self, x: &State, u: &DVector<f64>) -> Result<Vec<(State, f64)>> {
        let xi = x[0].round() as i64;
        let ui = u[0].round() as i64;
        Ok(self
            .row(xi, ui)
            .into_iter()
            .map(|(y, p)| (DVector::from_element(1, y as f64), p))
            .collect())
    }
}

/// Five-point Gauss–Hermite rule for a standard normal: nodes and weights.
#[allow(clippy::excessive_precision)]
pub const GAUSS_HERMITE_5: [(f64, f64); 5] = [
    (-2.8569700138728056, 0.011257411327720689),
    (-1.3556261799742659, 0.2220759220056126),
    (0.0, 0.5333333333333333),
    (1.3556261799742659, 0.2220759220056126),
    (2.8569700138728056, 0.011257411327720689),
];

/// Euler–Maruyama step of an SDE with the Gaussian increment replaced by a
/// tensor-product Gauss–Hermite rule.
#[derive(Debug, Clone)]
pub struct EulerGaussian {
    sys: SdeSystem,
    dt: f64,
}

impl EulerGaussian {
    pub fn new(sys: SdeSystem, dt: f64) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::Config(format!("time step {dt} must be positive")));
        }
        Ok(Self { sys, dt })
    }
}

impl TransitionModel for EulerGaussian {
    fn state_dim(&self) -> usize {
        self.sys.state_dim()
    }

    fn successors(&self, x: &State, u: &DVector<f64>) -> Result<Vec<(State, f64)>> {
        let mean = x + self.sys.controlled_drift(x, u)? * self.dt;
        let sigma = self.sys.diffusion(x)?;
        let xi = self.sys.noise_dim();
        let sd = self.dt.sqrt();
        let count = GAUSS_HERMITE_5.len().pow(xi as u32);
        let mut out = Vec::with_capacity(count);
        for mut code in 0..count {
            let mut z = DVector::zeros(xi);
            let mut p = 1.0;
            for j in 0..xi {
                let (node, w) = GAUSS_HERMITE_5[code % 5];
                code /= 5;
                z[j] = node * sd;
                p *= w;
            }
            out.push((&mean + &sigma * z, p));
        }
        Ok(out)
    }
}
