//! Space-time grid solutions of the kernel-integral (mild) system.
//!
//! A solution is a pair `(u, v)` on a space-time node set: `u` solves the
//! value line and `v` the flux lines of the system. Two independent
//! constructions are provided — node-by-node backward solves
//! ([`build_u_from_bsde`]) and direct sweep iteration on the integral
//! system ([`solve_mild_fixed_point`]) — plus a Monte-Carlo residual
//! audit ([`evaluate_mild_residuals`]) that checks every line of the
//! system at chosen test points.

pub mod build;
pub mod fixed_point;
pub mod pair;
pub mod residuals;

pub use build::{
    build_u_from_bsde, build_u_from_bsde_strict, BuildOutcome, McSettings, NodeFailure,
};
pub use fixed_point::{solve_mild_fixed_point, FixedPointOutcome};
pub use pair::{MildSolutionPair, Provenance, SpaceTimeNodes};
pub use residuals::{evaluate_mild_residuals, PointResidual, ResidualReport};
