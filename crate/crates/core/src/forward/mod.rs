//! Forward simulation of the canonical Markov process.
//!
//! Two model families are supported: classical diffusions with bounded drift
//! and diffusion matrix, and one-dimensional processes whose drift exists
//! only as the limit `Sigma` of mollified drifts. The second family is
//! simulated through its scale transform `h`, under which the process is a
//! driftless diffusion with bounded coefficient.

pub mod binfmt;
pub mod dd;
pub mod diffusion;
pub mod ensemble;
pub mod monotone;
pub mod scale;

pub use dd::{simulate_distributional_drift, DdSimulation, DistributionalDriftModel, ScalarFn};
pub use diffusion::{simulate_diffusion, DiffusionMatrixFn, DiffusionModel, DriftFn};
pub use ensemble::{estimate_kernel, KernelEstimate, PathEnsemble};
pub use monotone::MonotoneFunction;
pub use scale::{solve_scale_function, ScaleSolution};

use crate::error::Result;
use crate::grid::TimeGrid;

/// Either forward-model family, for callers that only need to simulate.
#[derive(Clone)]
pub enum ForwardModel {
    Diffusion(DiffusionModel),
    DistributionalDrift(DistributionalDriftModel),
}

impl ForwardModel {
    pub fn dim(&self) -> usize {
        match self {
            ForwardModel::Diffusion(m) => m.dim,
            ForwardModel::DistributionalDrift(_) => 1,
        }
    }

    pub fn simulate(
        &self,
        s: f64,
        x: &[f64],
        grid: &TimeGrid,
        n_paths: usize,
        seed: u64,
    ) -> Result<PathEnsemble> {
        match self {
            ForwardModel::Diffusion(m) => simulate_diffusion(m, s, x, grid, n_paths, seed),
            ForwardModel::DistributionalDrift(m) => {
                simulate_distributional_drift(m, s, x[0], grid, n_paths, seed).map(|r| r.ensemble)
            }
        }
    }
}
