//! Euler-Maruyama simulation of bounded-coefficient diffusions.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::forward::ensemble::PathEnsemble;
use crate::grid::TimeGrid;
use crate::rng::path_rng;

pub type DriftFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
pub type DiffusionMatrixFn = Arc<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>;

/// Time-inhomogeneous diffusion with drift `mu` and diffusion matrix
/// `alpha`, together with declared sup-norm bounds for both.
///
/// `alpha` is the matrix of the second-order part of the generator, so the
/// noise is driven by its symmetric square root. The bounds are part of the
/// model: they are not inferred, and [`DiffusionModel::check_bounds`] can
/// audit them on sampled points.
#[derive(Clone)]
pub struct DiffusionModel {
    pub dim: usize,
    mu: DriftFn,
    alpha: DiffusionMatrixFn,
    pub mu_bound: f64,
    pub alpha_bound: f64,
}

impl DiffusionModel {
    pub fn new(
        dim: usize,
        mu: DriftFn,
        alpha: DiffusionMatrixFn,
        mu_bound: f64,
        alpha_bound: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(CoreError::Config("diffusion dimension must be positive".into()));
        }
        if !(mu_bound >= 0.0 && alpha_bound >= 0.0) {
            return Err(CoreError::Config("sup-norm bounds must be non-negative".into()));
        }
        Ok(Self { dim, mu, alpha, mu_bound, alpha_bound })
    }

    /// One-dimensional model from scalar coefficient functions.
    pub fn scalar(
        mu: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        alpha: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        mu_bound: f64,
        alpha_bound: f64,
    ) -> Result<Self> {
        Self::new(
            1,
            Arc::new(move |t, x: &[f64]| vec![mu(t, x[0])]),
            Arc::new(move |t, x: &[f64]| DMatrix::from_element(1, 1, alpha(t, x[0]))),
            mu_bound,
            alpha_bound,
        )
    }

    /// Standard Brownian motion in `dim` dimensions: zero drift, identity
    /// diffusion matrix.
    pub fn brownian(dim: usize) -> Result<Self> {
        Self::new(
            dim,
            Arc::new(move |_t, _x: &[f64]| vec![0.0; dim]),
            Arc::new(move |_t, _x: &[f64]| DMatrix::identity(dim, dim)),
            0.0,
            1.0,
        )
    }

    pub fn mu(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (self.mu)(t, x)
    }

    pub fn alpha(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        (self.alpha)(t, x)
    }

    /// Audits the declared sup-norm bounds at the given points.
    pub fn check_bounds<'a>(
        &self,
        points: impl IntoIterator<Item = (f64, &'a [f64])>,
    ) -> Result<()> {
        let slack = 1e-12;
        for (t, x) in points {
            for (i, m) in self.mu(t, x).iter().enumerate() {
                if !(m.abs() <= self.mu_bound * (1.0 + slack)) {
                    return Err(CoreError::Domain(format!(
                        "|mu_{i}({t}, {x:?})| = {} exceeds declared bound {}",
                        m.abs(),
                        self.mu_bound
                    )));
                }
            }
            let a = self.alpha(t, x);
            for v in a.iter() {
                if !(v.abs() <= self.alpha_bound * (1.0 + slack)) {
                    return Err(CoreError::Domain(format!(
                        "|alpha({t}, {x:?})| entry {} exceeds declared bound {}",
                        v.abs(),
                        self.alpha_bound
                    )));
                }
            }
        }
        Ok(())
    }

    /// Symmetric square root of `alpha(t, x)`. Eigenvalues in
    /// `[-1e-10, 0)` are treated as floating-point noise and clipped to 0;
    /// anything more negative is a genuine PSD violation and is an error.
    pub fn diffusion_root(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        let a = self.alpha(t, x);
        symmetric_sqrt(&a, t, x)
    }
}

const PSD_CLIP: f64 = -1e-10;

pub fn symmetric_sqrt(a: &DMatrix<f64>, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(CoreError::Config(format!(
            "diffusion matrix at (t={t}, x={x:?}) is {}x{}, expected square",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !scale.is_finite() {
        return Err(CoreError::NonFinite(format!("diffusion matrix at (t={t}, x={x:?})")));
    }
    for i in 0..d {
        for j in (i + 1)..d {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * (1.0 + scale) {
                return Err(CoreError::Numerical(format!(
                    "diffusion matrix at (t={t}, x={x:?}) is not symmetric"
                )));
            }
        }
    }
    if d == 1 {
        let v = a[(0, 0)];
        if v < PSD_CLIP {
            return Err(CoreError::NonPsd { t, x: x.to_vec(), min_eig: v });
        }
        return Ok(DMatrix::from_element(1, 1, v.max(0.0).sqrt()));
    }
    let eig = a.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eig < PSD_CLIP * (1.0 + scale) {
        return Err(CoreError::NonPsd { t, x: x.to_vec(), min_eig });
    }
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose())
}

/// Simulates `n_paths` Euler-Maruyama paths started from `(s, x)` on `grid`.
///
/// Each path draws from its own counter-derived RNG stream, so the result is
/// bit-identical for a given seed regardless of how work is scheduled across
/// threads. The state at the grid origin is `x` exactly.
pub fn simulate_diffusion(
    model: &DiffusionModel,
    s: f64,
    x: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if grid.t0() != s {
        return Err(CoreError::Config(format!(
            "grid starts at {} but the simulation starts at {s}",
            grid.t0()
        )));
    }
    if x.len() != model.dim {
        return Err(CoreError::Config(format!(
            "start point has dimension {}, model has dimension {}",
            x.len(),
            model.dim
        )));
    }
    if n_paths == 0 {
        return Err(CoreError::Config("n_paths must be at least 1".into()));
    }

    let d = model.dim;
    let n_steps = grid.n_steps();
    let times = grid.times();
    let sqrt_dts: Vec<f64> = (0..n_steps).map(|k| grid.dt(k).sqrt()).collect();

    let state_stride = (n_steps + 1) * d;
    let incr_stride = n_steps * d;
    let mut states = vec![0.0f64; n_paths * state_stride];
    let mut increments = vec![0.0f64; n_paths * incr_stride];

    let outcomes: Vec<Result<()>> = states
        .par_chunks_mut(state_stride)
        .zip(increments.par_chunks_mut(incr_stride))
        .enumerate()
        .map(|(p, (path_states, path_incr))| {
            simulate_one_path(model, x, times, &sqrt_dts, seed, p as u64, path_states, path_incr)
        })
        .collect();
    for outcome in outcomes {
        outcome?;
    }

    PathEnsemble::from_parts(grid.clone(), s, x.to_vec(), n_paths, states, increments, seed)
}

#[allow(clippy::too_many_arguments)]
fn simulate_one_path(
    model: &DiffusionModel,
    x: &[f64],
    times: &[f64],
    sqrt_dts: &[f64],
    seed: u64,
    path_index: u64,
    states: &mut [f64],
    incr: &mut [f64],
) -> Result<()> {
    let d = model.dim;
    let n_steps = sqrt_dts.len();
    let mut rng = path_rng(seed, path_index);

    states[..d].copy_from_slice(x);
    for k in 0..n_steps {
        let t = times[k];
        let dt = times[k + 1] - times[k];
        let (cur, rest) = states[k * d..].split_at_mut(d);
        let next = &mut rest[..d];
        let dw = &mut incr[k * d..(k + 1) * d];
        for w in dw.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = sqrt_dts[k] * z;
        }
        let mu = model.mu(t, cur);
        let root = symmetric_sqrt(&model.alpha(t, cur), t, cur)?;
        for i in 0..d {
            let mut noise = 0.0;
            for j in 0..d {
                noise += root[(i, j)] * dw[j];
            }
            let v = cur[i] + mu[i] * dt + noise;
            if !v.is_finite() {
                return Err(CoreError::NonFinite(format!(
                    "state on path {path_index} at step {}",
                    k + 1
                )));
            }
            next[i] = v;
        }
    }
    Ok(())
}
