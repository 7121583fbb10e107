//! Picard iteration for backward equations driven by path ensembles.
//!
//! Starting from the zero pair, each iterate regresses
//! `g(X_T) + sum_{r>=t} f(r, X_r, Y_prev, Z_prev) dv_r` on the slice-`t`
//! features to get `Y_t`, forms the compensated increments of `Y` as the
//! martingale increments, and extracts `Z` as the slice regression of
//! `dM * dM[psi_i]` divided by the clock increment. Successive iterates are
//! compared in the exponentially weighted norm
//! `sum_t e^{lambda V_t} ( E[dY_t^2] dv_t + E[(d dM_t)^2] )`,
//! whose weight `lambda = 1 + 2 (K_Y^2 + C (d K_Z)^2)` makes the iteration
//! a strict contraction in exact arithmetic; the realized squared increments
//! stand in for the predictable bracket.

use serde::Serialize;

use crate::bsde::basis::{RegressionBasis, SliceRegression};
use crate::bsde::types::{DriverSpec, TerminalSpec};
use crate::error::{CoreError, Result};
use crate::forward::PathEnsemble;
use crate::grid::TimeGrid;
use crate::operators::PsiSystem;

/// Per-path increments of the auxiliary martingales `M[psi_i]`, plus the
/// recorded bound on their bracket density used for the contraction weight.
#[derive(Debug, Clone)]
pub struct PsiIncrements {
    pub d: usize,
    pub n_paths: usize,
    pub n_steps: usize,
    /// Layout `[path][step][component]`.
    data: Vec<f64>,
    pub bracket_bound: f64,
}

impl PsiIncrements {
    pub fn get(&self, path: usize, step: usize, component: usize) -> f64 {
        self.data[(path * self.n_steps + step) * self.d + component]
    }
}

/// Compensated increments of each `psi_i` along the ensemble:
/// `psi_i(t_{k+1}, X_{k+1}) - psi_i(t_k, X_k) - a(psi_i)(t_k, X_k) dv_k`,
/// with the system's recorded generator images.
pub fn psi_martingale_increments(
    ensemble: &PathEnsemble,
    system: &PsiSystem,
) -> Result<PsiIncrements> {
    let d = system.len();
    let n = ensemble.n_paths();
    let grid = ensemble.grid();
    let s_steps = grid.n_steps();
    for i in 0..d {
        if system.psi(i).dim() != ensemble.dim() {
            return Err(CoreError::Config(format!(
                "psi component {i} has dimension {}, ensemble has {}",
                system.psi(i).dim(),
                ensemble.dim()
            )));
        }
    }
    let mut data = vec![0.0; n * s_steps * d];
    for p in 0..n {
        for k in 0..s_steps {
            let (t0, t1) = (grid.time(k), grid.time(k + 1));
            let dv = grid.dv(k);
            let x0 = ensemble.state(p, k);
            let x1 = ensemble.state(p, k + 1);
            for i in 0..d {
                let psi = system.psi(i);
                let inc = psi.eval(t1, x1) - psi.eval(t0, x0) - system.a_psi(i, t0, x0) * dv;
                if !inc.is_finite() {
                    return Err(CoreError::NonFinite(format!(
                        "psi increment (path {p}, step {k}, component {i})"
                    )));
                }
                data[(p * s_steps + k) * d + i] = inc;
            }
        }
    }
    Ok(PsiIncrements {
        d,
        n_paths: n,
        n_steps: s_steps,
        data,
        bracket_bound: system.max_gamma_diag_bound(),
    })
}

#[derive(Debug, Clone)]
pub struct PicardConfig {
    pub max_iter: usize,
    /// Absolute threshold on the weighted squared distance between
    /// successive iterates; `None` uses 1e-4 times the first distance.
    pub tol: Option<f64>,
    /// Override for the exponential weight; `None` uses the contraction
    /// value derived from the driver constants and the bracket bound.
    pub lambda: Option<f64>,
    pub basis: RegressionBasis,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { max_iter: 25, tol: None, lambda: None, basis: RegressionBasis::default() }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(CoreError::Config("max_iter must be at least 1".into()));
        }
        if let Some(tol) = self.tol {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(CoreError::Config(format!("tol must be positive, got {tol}")));
            }
        }
        if let Some(l) = self.lambda {
            if !(l.is_finite() && l > 0.0) {
                return Err(CoreError::Config(format!("lambda must be positive, got {l}")));
            }
        }
        self.basis.validate()
    }
}

/// Converged (or last) Picard iterate with its diagnostics.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub n_paths: usize,
    pub n_steps: usize,
    pub d_psi: usize,
    pub(crate) grid: TimeGrid,
    /// `n_paths x (n_steps + 1)`, path-major.
    pub(crate) y: Vec<f64>,
    /// `n_paths x n_steps x d_psi`, path-major.
    pub(crate) z: Vec<f64>,
    /// `n_paths x n_steps`, path-major.
    pub(crate) m_increments: Vec<f64>,
    pub lambda: f64,
    pub psi_bracket_bound: f64,
    /// Weighted squared distances between successive iterates.
    pub distances: Vec<f64>,
    /// `distances[k] / distances[k-1]`.
    pub ratios: Vec<f64>,
    /// Per-iteration `E[int f^2 dV]`.
    pub driver_norms: Vec<f64>,
    /// Per-iteration, per-slice mean of `(Y_k - Y_{k-1})^2`.
    pub(crate) slice_y_msd: Vec<Vec<f64>>,
    /// Per-iteration, per-slice mean of `(dM_k - dM_{k-1})^2`.
    pub(crate) slice_m_msd: Vec<Vec<f64>>,
    /// Mean and standard error of the slice-0 regression targets of the
    /// final iterate (the Monte-Carlo estimate behind `Y_0`).
    pub start_target_mean: f64,
    pub start_target_se: f64,
    /// Standard errors of the slice-0 `Z` components.
    pub start_z_se: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PicardDiagnostics {
    pub iterations: usize,
    pub distances: Vec<f64>,
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub lambda: f64,
    pub driver_norms: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleSliceStat {
    pub t: f64,
    pub mean: f64,
    pub std_error: f64,
}

impl BsdeSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn y(&self, path: usize, step: usize) -> f64 {
        self.y[path * (self.n_steps + 1) + step]
    }

    pub fn z(&self, path: usize, step: usize, component: usize) -> f64 {
        self.z[(path * self.n_steps + step) * self.d_psi + component]
    }

    pub fn m_increment(&self, path: usize, step: usize) -> f64 {
        self.m_increments[path * self.n_steps + step]
    }

    pub fn y_slice(&self, step: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.y(p, step)).collect()
    }

    pub fn y_slice_stats(&self, step: usize) -> (f64, f64) {
        mean_se((0..self.n_paths).map(|p| self.y(p, step)))
    }

    /// Per-slice mean and standard error of the martingale increments; for
    /// a sound solution every mean sits within a few SE of zero.
    pub fn martingale_slice_report(&self) -> Vec<MartingaleSliceStat> {
        (0..self.n_steps)
            .map(|k| {
                let (mean, se) = mean_se((0..self.n_paths).map(|p| self.m_increment(p, k)));
                MartingaleSliceStat { t: self.grid.time(k), mean, std_error: se }
            })
            .collect()
    }

    /// Recomputes the per-iteration distances under a different exponential
    /// weight and clock, from the stored per-slice mean squared differences.
    pub fn rebuild_distances(&self, lambda: f64, dv_weights: &[f64]) -> Result<Vec<f64>> {
        if dv_weights.len() != self.n_steps {
            return Err(CoreError::Config(format!(
                "{} clock weights for {} steps",
                dv_weights.len(),
                self.n_steps
            )));
        }
        if dv_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(CoreError::Config("clock weights must be positive".into()));
        }
        let mut v = 0.0;
        let mut weights = Vec::with_capacity(self.n_steps);
        for dv in dv_weights {
            let w = (lambda * v).exp();
            if !w.is_finite() {
                return Err(CoreError::Numerical(format!(
                    "exponential weight overflows at lambda={lambda}, V={v}"
                )));
            }
            weights.push(w);
            v += dv;
        }
        Ok(self
            .slice_y_msd
            .iter()
            .zip(&self.slice_m_msd)
            .map(|(ymsd, mmsd)| {
                let mut acc = 0.0;
                for t in 0..self.n_steps {
                    acc += weights[t] * (ymsd[t] * dv_weights[t] + mmsd[t]);
                }
                acc
            })
            .collect())
    }

    pub fn diagnostics(&self) -> PicardDiagnostics {
        PicardDiagnostics {
            iterations: self.iterations,
            distances: self.distances.clone(),
            ratios: self.ratios.clone(),
            converged: self.converged,
            lambda: self.lambda,
            driver_norms: self.driver_norms.clone(),
        }
    }

    pub fn write_diagnostics_json<W: std::io::Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.diagnostics())
            .map_err(|e| CoreError::Numerical(format!("diagnostics serialization failed: {e}")))
    }

    /// Per-slice summary CSV: `t, mean_y, se_y, mean_z_norm` (the Z column
    /// is empty on the terminal slice, which has no increment).
    pub fn write_slice_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "mean_y", "se_y", "mean_z_norm"])?;
        for k in 0..=self.n_steps {
            let (mean, se) = self.y_slice_stats(k);
            let z_norm = if k < self.n_steps {
                let mut acc = 0.0;
                for p in 0..self.n_paths {
                    let mut n2 = 0.0;
                    for i in 0..self.d_psi {
                        let zi = self.z(p, k, i);
                        n2 += zi * zi;
                    }
                    acc += n2.sqrt();
                }
                format!("{}", acc / self.n_paths as f64)
            } else {
                String::new()
            };
            out.write_record(&[
                format!("{}", self.grid.time(k)),
                format!("{mean}"),
                format!("{se}"),
                z_norm,
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn mean_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let vals: Vec<f64> = values.collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / ((n - 1.0) * n)).sqrt())
}

/// Default exponential weight for the contraction norm.
pub fn contraction_lambda(k_y: f64, k_z: f64, d_psi: usize, bracket_bound: f64) -> f64 {
    let dz = d_psi as f64 * k_z;
    1.0 + 2.0 * (k_y * k_y + bracket_bound * dz * dz)
}

/// Runs the Picard iteration from the zero pair.
///
/// Non-convergence within `max_iter` is not an error: the last iterate is
/// returned with `converged = false`.
pub fn picard_solve(
    ensemble: &PathEnsemble,
    psi: &PsiIncrements,
    driver: &DriverSpec,
    terminal: &TerminalSpec,
    cfg: &PicardConfig,
) -> Result<BsdeSolution> {
    cfg.validate()?;
    let n = ensemble.n_paths();
    let grid = ensemble.grid().clone();
    let s_steps = grid.n_steps();
    let d = psi.d;
    if psi.n_paths != n || psi.n_steps != s_steps {
        return Err(CoreError::Config(format!(
            "psi increments shaped {}x{} for an ensemble of {}x{}",
            psi.n_paths, psi.n_steps, n, s_steps
        )));
    }
    // Lipschitz and growth audits are explicit operations on the specs, not
    // implicit preconditions here: drivers and terminals may be partial
    // functions tailored to the reachable region, which box sampling would
    // wrongly reject. The solver enforces finiteness along actual paths.

    let lambda = cfg
        .lambda
        .unwrap_or_else(|| contraction_lambda(driver.k_y, driver.k_z, d, psi.bracket_bound));
    // Exponential weights at the left endpoints of the clock.
    let mut exp_weights = Vec::with_capacity(s_steps);
    for t in 0..s_steps {
        let w = (lambda * grid.clock_value(t)).exp();
        if !w.is_finite() {
            return Err(CoreError::Numerical(format!(
                "exponential weight overflows at lambda={lambda}, V={}",
                grid.clock_value(t)
            )));
        }
        exp_weights.push(w);
    }

    let g_term: Vec<f64> = (0..n)
        .map(|p| {
            let v = terminal.eval(ensemble.state(p, s_steps));
            if v.is_finite() {
                Ok(v)
            } else {
                Err(CoreError::NonFinite(format!("terminal condition at path {p}")))
            }
        })
        .collect::<Result<_>>()?;

    let regs: Vec<SliceRegression> = (0..s_steps)
        .map(|t| SliceRegression::fit(ensemble, t, &cfg.basis))
        .collect::<Result<_>>()?;

    let y_stride = s_steps + 1;
    let mut y_prev = vec![0.0f64; n * y_stride];
    let mut z_prev = vec![0.0f64; n * s_steps * d];
    let mut m_prev = vec![0.0f64; n * s_steps];
    let mut y_cur = vec![0.0f64; n * y_stride];
    let mut z_cur = vec![0.0f64; n * s_steps * d];
    let mut m_cur = vec![0.0f64; n * s_steps];
    let mut f_vals = vec![0.0f64; n * s_steps];
    let mut running = vec![0.0f64; n];
    let mut target = vec![0.0f64; n];

    let mut distances: Vec<f64> = Vec::new();
    let mut ratios: Vec<f64> = Vec::new();
    let mut driver_norms: Vec<f64> = Vec::new();
    let mut slice_y_msd: Vec<Vec<f64>> = Vec::new();
    let mut slice_m_msd: Vec<Vec<f64>> = Vec::new();
    let mut start_target_mean = 0.0;
    let mut start_target_se = 0.0;
    let mut start_z_se = vec![0.0; d];
    let mut converged = false;
    let mut iterations = 0;
    let mut tol = cfg.tol;

    for _k in 1..=cfg.max_iter {
        iterations += 1;
        // Driver values along the previous iterate.
        let mut driver_norm = 0.0;
        for p in 0..n {
            for r in 0..s_steps {
                let f = driver.eval(
                    grid.time(r),
                    ensemble.state(p, r),
                    y_prev[p * y_stride + r],
                    &z_prev[(p * s_steps + r) * d..(p * s_steps + r) * d + d],
                );
                if !f.is_finite() {
                    return Err(CoreError::NonFinite(format!(
                        "driver at path {p}, step {r}"
                    )));
                }
                f_vals[p * s_steps + r] = f;
                driver_norm += f * f * grid.dv(r);
            }
        }
        driver_norms.push(driver_norm / n as f64);

        // Terminal pinning, then the backward regression sweep.
        for p in 0..n {
            y_cur[p * y_stride + s_steps] = g_term[p];
        }
        running.fill(0.0);
        for t in (0..s_steps).rev() {
            let dv = grid.dv(t);
            for p in 0..n {
                running[p] += f_vals[p * s_steps + t] * dv;
                target[p] = g_term[p] + running[p];
            }
            let fitted = regs[t].project(&target)?;
            for p in 0..n {
                y_cur[p * y_stride + t] = fitted[p];
            }
            if t == 0 {
                let (mean, se) = mean_se(target.iter().cloned());
                start_target_mean = mean;
                start_target_se = se;
            }
        }

        // Martingale increments of the new iterate.
        for p in 0..n {
            for j in 0..s_steps {
                m_cur[p * s_steps + j] = y_cur[p * y_stride + j + 1] - y_cur[p * y_stride + j]
                    + f_vals[p * s_steps + j] * grid.dv(j);
            }
        }

        // Z: slice regression of the cross increments over the clock.
        for j in 0..s_steps {
            let dv = grid.dv(j);
            for i in 0..d {
                for p in 0..n {
                    target[p] = m_cur[p * s_steps + j] * psi.get(p, j, i);
                }
                let fitted = regs[j].project(&target)?;
                for p in 0..n {
                    z_cur[(p * s_steps + j) * d + i] = fitted[p] / dv;
                }
                if j == 0 {
                    let (_, se) = mean_se(target.iter().cloned());
                    start_z_se[i] = se / dv;
                }
            }
        }

        // Distance to the previous iterate in the weighted norm.
        let mut ymsd = vec![0.0; s_steps];
        let mut mmsd = vec![0.0; s_steps];
        for p in 0..n {
            for t in 0..s_steps {
                let dy = y_cur[p * y_stride + t] - y_prev[p * y_stride + t];
                ymsd[t] += dy * dy;
                let dm = m_cur[p * s_steps + t] - m_prev[p * s_steps + t];
                mmsd[t] += dm * dm;
            }
        }
        for t in 0..s_steps {
            ymsd[t] /= n as f64;
            mmsd[t] /= n as f64;
        }
        let mut distance = 0.0;
        for t in 0..s_steps {
            distance += exp_weights[t] * (ymsd[t] * grid.dv(t) + mmsd[t]);
        }
        slice_y_msd.push(ymsd);
        slice_m_msd.push(mmsd);
        if let Some(prev) = distances.last() {
            ratios.push(if *prev > 0.0 { distance / prev } else { 0.0 });
        }
        distances.push(distance);
        if tol.is_none() {
            tol = Some(1e-4 * distance);
        }
        if distance <= tol.expect("set on first iteration") {
            converged = true;
            break;
        }

        std::mem::swap(&mut y_prev, &mut y_cur);
        std::mem::swap(&mut z_prev, &mut z_cur);
        std::mem::swap(&mut m_prev, &mut m_cur);
    }

    Ok(BsdeSolution {
        n_paths: n,
        n_steps: s_steps,
        d_psi: d,
        grid,
        y: y_cur,
        z: z_cur,
        m_increments: m_cur,
        lambda,
        psi_bracket_bound: psi.bracket_bound,
        distances,
        ratios,
        driver_norms,
        slice_y_msd,
        slice_m_msd,
        start_target_mean,
        start_target_se,
        start_z_se,
        converged,
        iterations,
    })
}

/// Standalone bracket-density extraction: per slice and component,
/// `Z_i(t) =` regression of `dM * dM[psi_i]` on the slice features,
/// divided by the clock increment.
pub fn estimate_z(
    ensemble: &PathEnsemble,
    m_increments: &[f64],
    psi: &PsiIncrements,
    basis: &RegressionBasis,
) -> Result<Vec<f64>> {
    let n = ensemble.n_paths();
    let grid = ensemble.grid();
    let s_steps = grid.n_steps();
    if m_increments.len() != n * s_steps {
        return Err(CoreError::Config(format!(
            "{} martingale increments for {n} paths x {s_steps} steps",
            m_increments.len()
        )));
    }
    if psi.n_paths != n || psi.n_steps != s_steps {
        return Err(CoreError::Config("psi increments shaped differently from ensemble".into()));
    }
    let d = psi.d;
    let mut z = vec![0.0; n * s_steps * d];
    let mut targets = vec![0.0; n];
    for j in 0..s_steps {
        let reg = SliceRegression::fit(ensemble, j, basis)?;
        let dv = grid.dv(j);
        for i in 0..d {
            for p in 0..n {
                targets[p] = m_increments[p * s_steps + j] * psi.get(p, j, i);
            }
            let fitted = reg.project(&targets)?;
            for p in 0..n {
                z[(p * s_steps + j) * d + i] = fitted[p] / dv;
            }
        }
    }
    Ok(z)
}

/// Ratios of successive iterate distances under the contraction weight
/// derived from `(K_Y, K_Z)` and the solution's recorded bracket bound.
pub fn contraction_diagnostics(
    solution: &BsdeSolution,
    k_y: f64,
    k_z: f64,
    dv_weights: &[f64],
) -> Result<Vec<f64>> {
    if solution.iterations < 3 {
        return Err(CoreError::Config(format!(
            "contraction diagnostics need at least 3 iterates, got {}",
            solution.iterations
        )));
    }
    let lambda = contraction_lambda(k_y, k_z, solution.d_psi, solution.psi_bracket_bound);
    let distances = solution.rebuild_distances(lambda, dv_weights)?;
    Ok(distances
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect())
}
