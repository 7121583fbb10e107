//! Simulation of one-dimensional processes whose drift is too singular to
//! evaluate pointwise and exists only through the primitive `Sigma`.
//!
//! The scale transform `h` with `h' = exp(-Sigma)` removes the drift:
//! `Y = h(X)` is a driftless diffusion with coefficient
//! `sigma_tilde(y) = (sigma * h')(h^{-1}(y))`, bounded between the declared
//! constants `c1` and `C1`. We simulate `Y` by Euler-Maruyama and map back
//! through `h^{-1}`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::forward::ensemble::PathEnsemble;
use crate::forward::monotone::MonotoneFunction;
use crate::forward::scale::solve_scale_function;
use crate::grid::TimeGrid;
use crate::rng::path_rng;
use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Below this value of `h'` the tabulated `h` can no longer stay strictly
/// increasing in double precision, so the tabulation domain stops there.
const H_PRIME_FLOOR: f64 = 1e-10;

/// Model for a process with distributional drift, carried entirely by
/// `sigma`, the drift primitive `Sigma`, and the scale function `h`.
///
/// `c1` and `C1` are declared bounds with `c1 <= sigma * h' <= C1`; the
/// tabulation domain of `h` is capped to the region around 0 where the
/// declared bounds actually hold, so the bounds double as the model's
/// validity region.
#[derive(Clone)]
pub struct DistributionalDriftModel {
    sigma: ScalarFn,
    sigma_big: ScalarFn,
    pub h: MonotoneFunction,
    pub sigma_shift: f64,
    pub c1: f64,
    pub c_big1: f64,
    inv_delta: HermiteTable,
    start_x: f64,
    horizon: f64,
    resolution: usize,
    width_factor: f64,
}

impl std::fmt::Debug for DistributionalDriftModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DistributionalDriftModel")
            .field("domain", &(self.h.x_min(), self.h.x_max()))
            .field("sigma_shift", &self.sigma_shift)
            .field("c1", &self.c1)
            .field("c_big1", &self.c_big1)
            .field("width_factor", &self.width_factor)
            .finish_non_exhaustive()
    }
}

impl DistributionalDriftModel {
    /// Builds the scale function on `[x - 6 sqrt(T) C1/c1, x + 6 sqrt(T) C1/c1]`
    /// intersected with the region where `exp(-Sigma)` stays representable
    /// and the declared bounds hold.
    pub fn build(
        sigma: ScalarFn,
        sigma_big: ScalarFn,
        start_x: f64,
        horizon: f64,
        c1: f64,
        c_big1: f64,
        resolution: usize,
    ) -> Result<Self> {
        if !(c1.is_finite() && c_big1.is_finite() && c1 > 0.0 && c_big1 >= c1) {
            return Err(CoreError::Config(format!(
                "need 0 < c1 <= C1, got c1={c1}, C1={c_big1}"
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(CoreError::Config(format!("horizon must be positive, got {horizon}")));
        }
        if !start_x.is_finite() {
            return Err(CoreError::Config("start point must be finite".into()));
        }
        if resolution < 16 {
            return Err(CoreError::Config("scale tabulation needs resolution >= 16".into()));
        }
        Self::build_with_factor(sigma, sigma_big, start_x, horizon, c1, c_big1, resolution, 1.0)
    }

    #[allow(clippy::too_many_arguments)]
    fn build_with_factor(
        sigma: ScalarFn,
        sigma_big: ScalarFn,
        start_x: f64,
        horizon: f64,
        c1: f64,
        c_big1: f64,
        resolution: usize,
        width_factor: f64,
    ) -> Result<Self> {
        let shift = sigma_big(0.0);
        if !shift.is_finite() {
            return Err(CoreError::NonFinite("Sigma(0)".into()));
        }
        let sig0 = sigma(0.0);
        if !(sig0 >= c1 && sig0 <= c_big1) {
            return Err(CoreError::Config(format!(
                "sigma(0) * h'(0) = {sig0} is outside the declared bounds [{c1}, {c_big1}]"
            )));
        }

        let admissible = |z: f64| -> bool {
            let hp = (-(sigma_big(z) - shift)).exp();
            if !hp.is_finite() || hp < H_PRIME_FLOOR {
                return false;
            }
            let shp = sigma(z) * hp;
            shp.is_finite() && shp >= c1 && shp <= c_big1
        };

        let width = 6.0 * horizon.sqrt() * c_big1 / c1 * width_factor;
        let target_hi = (start_x + width).max(0.0);
        let target_lo = (start_x - width).min(0.0);
        let hi = admissible_frontier(&admissible, target_hi);
        let lo = admissible_frontier(&admissible, target_lo);
        if hi <= lo || !(lo <= start_x && start_x <= hi) {
            return Err(CoreError::Domain(format!(
                "declared bounds [{c1}, {c_big1}] hold only on [{lo}, {hi}], \
                 which does not cover the start point {start_x}"
            )));
        }

        let scale = solve_scale_function(&*sigma_big, (lo, hi), resolution)?;
        let (xs, ys) = scale.h.knots();
        let delta: Vec<f64> = xs.iter().zip(ys.iter()).map(|(x, y)| x - y).collect();
        let inv_delta = HermiteTable::new(ys.to_vec(), delta)?;

        Ok(Self {
            sigma,
            sigma_big,
            h: scale.h,
            sigma_shift: scale.sigma_shift,
            c1,
            c_big1,
            inv_delta,
            start_x,
            horizon,
            resolution,
            width_factor,
        })
    }

    /// Same model rebuilt with the requested tabulation width doubled. The
    /// admissibility cap still applies, so the domain may not actually grow.
    pub fn extended(&self) -> Result<Self> {
        Self::build_with_factor(
            self.sigma.clone(),
            self.sigma_big.clone(),
            self.start_x,
            self.horizon,
            self.c1,
            self.c_big1,
            self.resolution,
            self.width_factor * 2.0,
        )
    }

    pub fn sigma(&self, x: f64) -> f64 {
        (self.sigma)(x)
    }

    pub fn sigma_big(&self, x: f64) -> f64 {
        (self.sigma_big)(x)
    }

    /// `h'(x) = exp(-(Sigma(x) - Sigma(0)))`; the shift normalizes `h'(0) = 1`.
    pub fn h_prime(&self, x: f64) -> f64 {
        (-(self.sigma_big(x) - self.sigma_shift)).exp()
    }

    /// Inverse of `h`, evaluated as `y` plus an interpolated correction so
    /// that an identity `h` maps back bit-exactly.
    pub fn h_inverse(&self, y: f64) -> Result<f64> {
        if !(y >= self.h.y_min() && y <= self.h.y_max()) {
            return Err(CoreError::Domain(format!(
                "y={y} outside tabulated h range [{}, {}]",
                self.h.y_min(),
                self.h.y_max()
            )));
        }
        let x = y + self.inv_delta.eval(y);
        Ok(x.clamp(self.h.x_min(), self.h.x_max()))
    }

    /// Diffusion coefficient of `Y = h(X)`.
    pub fn sigma_tilde(&self, y: f64) -> Result<f64> {
        let x = self.h_inverse(y)?;
        Ok(self.sigma(x) * self.h_prime(x))
    }
}

/// Largest admissible point between 0 and `target`, found by a geometric
/// outward walk from 0. `admissible(0)` is assumed (checked by the caller).
fn admissible_frontier(admissible: &dyn Fn(f64) -> bool, target: f64) -> f64 {
    if target == 0.0 {
        return 0.0;
    }
    let dir = target.signum();
    let mut good = 0.0;
    let mut step = 0.01;
    loop {
        let mut z = good + dir * step;
        if (target - z) * dir <= 0.0 {
            z = target;
        }
        if !admissible(z) {
            return good;
        }
        good = z;
        if good == target {
            return good;
        }
        step *= 1.06;
    }
}

/// Result of a distributional-drift simulation: the ensemble plus the model
/// actually used, which differs from the input when the tabulation domain
/// had to be extended.
#[derive(Debug)]
pub struct DdSimulation {
    pub ensemble: PathEnsemble,
    pub model: DistributionalDriftModel,
    pub extended: bool,
}

enum PathOutcome {
    Ok,
    RangeExit,
    Fail(CoreError),
}

/// Simulates the distributional-drift process from `(s, x)`.
///
/// If any path's `Y`-value exits the tabulated range of `h`, the tabulation
/// is extended once by a factor of 2 and the whole ensemble re-simulated
/// with the same seed; a second exit is an error.
pub fn simulate_distributional_drift(
    model: &DistributionalDriftModel,
    s: f64,
    x: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<DdSimulation> {
    match simulate_in_scale(model, s, x, grid, n_paths, seed)? {
        Some(ensemble) => Ok(DdSimulation { ensemble, model: model.clone(), extended: false }),
        None => {
            let wider = model.extended()?;
            let grew = wider.h.x_min() < model.h.x_min() || wider.h.x_max() > model.h.x_max();
            if !grew {
                return Err(CoreError::Domain(format!(
                    "paths exit the tabulated h range [{}, {}] and the admissibility \
                     cap prevents extending it",
                    model.h.x_min(),
                    model.h.x_max()
                )));
            }
            match simulate_in_scale(&wider, s, x, grid, n_paths, seed)? {
                Some(ensemble) => Ok(DdSimulation { ensemble, model: wider, extended: true }),
                None => Err(CoreError::Domain(format!(
                    "paths exit the tabulated h range even after extension to [{}, {}]",
                    wider.h.x_min(),
                    wider.h.x_max()
                ))),
            }
        }
    }
}

/// One simulation attempt; `Ok(None)` signals a range exit that the caller
/// may retry with a wider tabulation.
fn simulate_in_scale(
    model: &DistributionalDriftModel,
    s: f64,
    x: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<Option<PathEnsemble>> {
    if grid.t0() != s {
        return Err(CoreError::Config(format!(
            "grid starts at {} but the simulation starts at {s}",
            grid.t0()
        )));
    }
    if n_paths == 0 {
        return Err(CoreError::Config("n_paths must be at least 1".into()));
    }
    if !(x >= model.h.x_min() && x <= model.h.x_max()) {
        return Err(CoreError::Domain(format!(
            "start point {x} outside tabulated h domain [{}, {}]",
            model.h.x_min(),
            model.h.x_max()
        )));
    }
    let y0 = model.h.eval(x)?;
    let n_steps = grid.n_steps();
    let sqrt_dts: Vec<f64> = (0..n_steps).map(|k| grid.dt(k).sqrt()).collect();

    let state_stride = n_steps + 1;
    let mut states = vec![0.0f64; n_paths * state_stride];
    let mut increments = vec![0.0f64; n_paths * n_steps];

    let outcomes: Vec<PathOutcome> = states
        .par_chunks_mut(state_stride)
        .zip(increments.par_chunks_mut(n_steps))
        .enumerate()
        .map(|(p, (path_states, path_incr))| {
            simulate_one_scale_path(model, x, y0, &sqrt_dts, seed, p as u64, path_states, path_incr)
        })
        .collect();
    let mut exited = false;
    for outcome in outcomes {
        match outcome {
            PathOutcome::Ok => {}
            PathOutcome::RangeExit => exited = true,
            PathOutcome::Fail(e) => return Err(e),
        }
    }
    if exited {
        return Ok(None);
    }

    let ens =
        PathEnsemble::from_parts(grid.clone(), s, vec![x], n_paths, states, increments, seed)?;
    Ok(Some(ens))
}

#[allow(clippy::too_many_arguments)]
fn simulate_one_scale_path(
    model: &DistributionalDriftModel,
    x0: f64,
    y0: f64,
    sqrt_dts: &[f64],
    seed: u64,
    path_index: u64,
    states: &mut [f64],
    incr: &mut [f64],
) -> PathOutcome {
    let mut rng = path_rng(seed, path_index);
    let (y_lo, y_hi) = (model.h.y_min(), model.h.y_max());
    states[0] = x0;
    let mut y = y0;
    for k in 0..sqrt_dts.len() {
        let st = match model.sigma_tilde(y) {
            Ok(v) => v,
            Err(e) => return PathOutcome::Fail(e),
        };
        let z: f64 = rng.sample(StandardNormal);
        let dw = sqrt_dts[k] * z;
        incr[k] = dw;
        y += st * dw;
        if !(y >= y_lo && y <= y_hi) {
            return PathOutcome::RangeExit;
        }
        match model.h_inverse(y) {
            Ok(x) => states[k + 1] = x,
            Err(e) => return PathOutcome::Fail(e),
        }
    }
    PathOutcome::Ok
}

/// Plain cubic-Hermite interpolant with three-point slopes. Used for the
/// inverse correction `h^{-1}(y) - y`, whose values need not be monotone.
#[derive(Debug, Clone)]
struct HermiteTable {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl HermiteTable {
    fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(CoreError::Config("interpolation table needs >= 2 matching rows".into()));
        }
        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let d: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
        let mut slopes = vec![0.0; n];
        for i in 1..n - 1 {
            if d[i - 1] == d[i] {
                slopes[i] = d[i];
            } else {
                slopes[i] = (d[i - 1] * h[i] + d[i] * h[i - 1]) / (h[i - 1] + h[i]);
            }
        }
        slopes[0] = if n > 2 && d[0] != d[1] {
            d[0] + (d[0] - d[1]) * h[0] / (h[0] + h[1])
        } else {
            d[0]
        };
        slopes[n - 1] = if n > 2 && d[n - 2] != d[n - 3] {
            d[n - 2] + (d[n - 2] - d[n - 3]) * h[n - 2] / (h[n - 2] + h[n - 3])
        } else {
            d[n - 2]
        };
        Ok(Self { xs, ys, slopes })
    }

    fn eval(&self, x: f64) -> f64 {
        let i = match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.ys[i],
            Err(i) => i.saturating_sub(1).min(self.xs.len() - 2),
        };
        let h = self.xs[i + 1] - self.xs[i];
        let d = (self.ys[i + 1] - self.ys[i]) / h;
        let (m0, m1) = (self.slopes[i], self.slopes[i + 1]);
        let c = (3.0 * d - 2.0 * m0 - m1) / h;
        let e = (m0 + m1 - 2.0 * d) / (h * h);
        let dx = x - self.xs[i];
        self.ys[i] + dx * (m0 + dx * (c + dx * e))
    }
}
