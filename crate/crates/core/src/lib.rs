//! Probabilistic safety certificates for control-affine stochastic systems.
//!
//! The crate simulates SDEs, estimates long-horizon safe and reach
//! probabilities, and filters arbitrary nominal controllers so that the
//! expected safe probability of the closed loop is kept above a target.

pub mod baselines;
pub mod certificate;
pub mod error;
pub mod estimation;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
