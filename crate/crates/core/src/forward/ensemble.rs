//! Path storage and Monte-Carlo estimation of transition-kernel functionals.

use crate::error::{CoreError, Result};
use crate::grid::TimeGrid;

/// A simulated ensemble started from `(s, x)`.
///
/// States are stored path-major: path `p` occupies a contiguous block of
/// `(n_steps + 1) * dim` floats, one state per grid time. The Gaussian
/// increments that drove each path are retained in the same layout, one step
/// shorter. Immutable after construction and safe to share across workers.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    grid: TimeGrid,
    s: f64,
    x: Vec<f64>,
    dim: usize,
    n_paths: usize,
    states: Vec<f64>,
    increments: Vec<f64>,
    seed: u64,
}

impl PathEnsemble {
    pub fn from_parts(
        grid: TimeGrid,
        s: f64,
        x: Vec<f64>,
        n_paths: usize,
        states: Vec<f64>,
        increments: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        let dim = x.len();
        if dim == 0 || n_paths == 0 {
            return Err(CoreError::Config("ensemble needs dim >= 1 and n_paths >= 1".into()));
        }
        let n_steps = grid.n_steps();
        if states.len() != n_paths * (n_steps + 1) * dim {
            return Err(CoreError::Config(format!(
                "state buffer holds {} floats, layout needs {}",
                states.len(),
                n_paths * (n_steps + 1) * dim
            )));
        }
        if increments.len() != n_paths * n_steps * dim {
            return Err(CoreError::Config(format!(
                "increment buffer holds {} floats, layout needs {}",
                increments.len(),
                n_paths * n_steps * dim
            )));
        }
        if let Some(bad) = states.iter().chain(increments.iter()).find(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite(format!("ensemble contains {bad}")));
        }
        let ens = Self { grid, s, x, dim, n_paths, states, increments, seed };
        for p in 0..n_paths {
            if ens.state(p, 0) != ens.x.as_slice() {
                return Err(CoreError::Numerical(format!(
                    "path {p} does not start at the ensemble start point"
                )));
            }
        }
        Ok(ens)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Start time `s`; every state at grid times up to `s` equals the start
    /// point exactly.
    pub fn start_time(&self) -> f64 {
        self.s
    }

    pub fn start_state(&self) -> &[f64] {
        &self.x
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let stride = (self.grid.n_steps() + 1) * self.dim;
        let base = path * stride + step * self.dim;
        &self.states[base..base + self.dim]
    }

    /// All states of one path, step-major.
    pub fn path_states(&self, path: usize) -> &[f64] {
        let stride = (self.grid.n_steps() + 1) * self.dim;
        &self.states[path * stride..(path + 1) * stride]
    }

    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let stride = self.grid.n_steps() * self.dim;
        let base = path * stride + step * self.dim;
        &self.increments[base..base + self.dim]
    }

    /// States of every path at grid index `step`, in path order.
    pub fn iter_states_at(&self, step: usize) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n_paths).map(move |p| self.state(p, step))
    }

    pub fn terminal_states(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.iter_states_at(self.grid.n_steps())
    }

    pub fn raw_states(&self) -> &[f64] {
        &self.states
    }

    pub fn raw_increments(&self) -> &[f64] {
        &self.increments
    }
}

/// A Monte-Carlo functional estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

/// Estimates `E[phi(X_t)]` for the ensemble's start law.
///
/// `t` must be a grid time; there is no interpolation between slices. At the
/// start time the kernel acts as the identity, so the start value is
/// returned exactly with zero standard error rather than averaged. Sums run
/// in path order, so the estimate is deterministic.
pub fn estimate_kernel(
    ensemble: &PathEnsemble,
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    t: f64,
) -> Result<KernelEstimate> {
    let step = ensemble
        .grid()
        .index_of(t)
        .ok_or(CoreError::NotOnGrid { t })?;
    let n = ensemble.n_paths();
    if step == 0 {
        let value = phi(ensemble.start_state());
        if !value.is_finite() {
            return Err(CoreError::NonFinite(format!("phi at the start state, t={t}")));
        }
        return Ok(KernelEstimate { value, std_error: 0.0, n_paths: n });
    }
    let mut values = Vec::with_capacity(n);
    for x in ensemble.iter_states_at(step) {
        let v = phi(x);
        if !v.is_finite() {
            return Err(CoreError::NonFinite(format!("phi({x:?}) at t={t}")));
        }
        values.push(v);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let std_error = if n > 1 { (ss / ((n - 1) as f64 * n as f64)).sqrt() } else { 0.0 };
    Ok(KernelEstimate { value: mean, std_error, n_paths: n })
}
