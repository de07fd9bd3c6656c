//! Estimators for safe and reach probabilities and the tabulated fields they
//! produce.

pub mod field;
pub mod girsanov;
pub mod interp;
pub mod kernel_dp;
pub mod mc;
pub mod simplex;
pub mod transition;

pub use field::{
    Axis, ClampedField, Coord, FieldEval, ProbabilityField, Provenance, SafeProbField,
};
pub use girsanov::{
    is_probability, GirsanovWeight, ImportanceConfig, ImportanceSampler, QuadraticSign,
};
pub use interp::InterpOrder;
pub use kernel_dp::{dp_reach_avoid, DpConfig, DpResult, KernelModel};
pub use mc::{first_event, mc_probability, tabulate_field, tabulate_mc, Estimate, TabulateConfig};
pub use transition::{EulerGaussian, LatticeChain, TransitionModel};
