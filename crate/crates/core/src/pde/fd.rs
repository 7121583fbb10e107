//! One-dimensional semilinear finite-difference reference solver.
//!
//! Marches `∂_t u + ½α ∂²u + μ ∂u + f(t, x, u, α∂u) = 0` backward from
//! `u(T,·) = g` with a θ-weighted two-level scheme (θ = ½ is
//! Crank–Nicolson). The nonlinearity is handled by frozen-coefficient
//! inner iterations: the tridiagonal operator stays fixed within a step
//! while the driver term is re-evaluated at the latest iterate.

use nalgebra::DMatrix;

use crate::bsde::{DriverSpec, TerminalSpec};
use crate::error::{CoreError, Result};
use crate::forward::DiffusionModel;
use crate::operators::GridFunction;

/// Boundary handling for the truncated space interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    /// Pin `u(t, x_edge) = g(x_edge)` for all `t` (far-field values frozen
    /// at the terminal condition).
    DirichletFromTerminal,
    /// Homogeneous Neumann: zero slope at the edges, imposed by mirroring.
    NeumannZero,
}

#[derive(Debug, Clone)]
pub struct FdConfig {
    pub x_lo: f64,
    pub x_hi: f64,
    /// Number of space nodes (including both edges).
    pub n_space: usize,
    /// Number of time steps; the grid stores `n_time + 1` rows.
    pub n_time: usize,
    pub t0: f64,
    pub t_end: f64,
    /// Implicit weight; ½ is Crank–Nicolson, 1 fully implicit.
    pub theta: f64,
    pub boundary: BoundaryKind,
    pub inner_max_iter: usize,
    pub inner_tol: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            x_lo: -8.0,
            x_hi: 8.0,
            n_space: 321,
            n_time: 160,
            t0: 0.0,
            t_end: 1.0,
            theta: 0.5,
            boundary: BoundaryKind::DirichletFromTerminal,
            inner_max_iter: 5,
            inner_tol: 1e-10,
        }
    }
}

impl FdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_lo.is_finite() && self.x_hi.is_finite() && self.x_lo < self.x_hi) {
            return Err(CoreError::Config(format!(
                "space interval [{}, {}] is not a finite nonempty interval",
                self.x_lo, self.x_hi
            )));
        }
        if self.n_space < 3 {
            return Err(CoreError::Config(format!(
                "need at least 3 space nodes, got {}",
                self.n_space
            )));
        }
        if self.n_time < 1 {
            return Err(CoreError::Config("need at least one time step".into()));
        }
        // The scheme is unconditionally stable at theta ≥ 1/2, but grossly
        // unbalanced grids waste the spatial resolution; keep a quality
        // floor on the number of time steps.
        if (self.n_time as f64) < self.n_space as f64 / 4.0 {
            return Err(CoreError::Config(format!(
                "time steps ({}) below the quality floor n_space/4 ({:.2})",
                self.n_time,
                self.n_space as f64 / 4.0
            )));
        }
        if !(self.t0.is_finite() && self.t_end.is_finite() && self.t0 < self.t_end) {
            return Err(CoreError::Config(format!(
                "time interval [{}, {}] is not a finite nonempty interval",
                self.t0, self.t_end
            )));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(CoreError::Config(format!(
                "implicit weight must lie in [0, 1], got {}",
                self.theta
            )));
        }
        if self.inner_max_iter < 1 {
            return Err(CoreError::Config("need at least one inner iteration".into()));
        }
        if !(self.inner_tol.is_finite() && self.inner_tol > 0.0) {
            return Err(CoreError::Config(format!(
                "inner tolerance must be positive, got {}",
                self.inner_tol
            )));
        }
        Ok(())
    }
}

/// Finite-difference solution: values, their diffusion-weighted gradient,
/// and a truncation diagnostic.
#[derive(Debug)]
pub struct FdSolution {
    pub u: GridFunction,
    /// `α ∂_x u` on the same grid (central differences, one-sided at edges).
    pub flux: GridFunction,
    /// Reflection bound on the probability that a diffusion started in the
    /// central half of the interval reaches an edge before the horizon —
    /// the quantity that controls how strongly the artificial boundary
    /// condition can pollute values there.
    pub boundary_mass: f64,
    /// Set when `boundary_mass` exceeds 1e-3; widen the interval if the
    /// region of interest is affected.
    pub boundary_warning: bool,
}

/// Solves the tridiagonal system `a_i w_{i-1} + d_i w_i + c_i w_{i+1} = r_i`
/// in place via the Thomas recursion.
fn thomas(
    a: &[f64],
    d: &[f64],
    c: &[f64],
    r: &[f64],
    scratch: &mut Vec<f64>,
    out: &mut Vec<f64>,
) -> Result<()> {
    let n = d.len();
    scratch.clear();
    scratch.resize(2 * n, 0.0);
    let (cp, rp) = scratch.split_at_mut(n);
    let mut denom = d[0];
    if denom.abs() < 1e-300 {
        return Err(CoreError::Numerical("tridiagonal solve hit a zero pivot".into()));
    }
    cp[0] = c[0] / denom;
    rp[0] = r[0] / denom;
    for i in 1..n {
        denom = d[i] - a[i] * cp[i - 1];
        if denom.abs() < 1e-300 {
            return Err(CoreError::Numerical("tridiagonal solve hit a zero pivot".into()));
        }
        cp[i] = c[i] / denom;
        rp[i] = (r[i] - a[i] * rp[i - 1]) / denom;
    }
    out.clear();
    out.resize(n, 0.0);
    out[n - 1] = rp[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = rp[i] - cp[i] * out[i + 1];
    }
    Ok(())
}

fn alpha_at(model: &DiffusionModel, t: f64, x: f64) -> Result<f64> {
    let m: DMatrix<f64> = model.alpha(t, &[x]);
    if m.nrows() != 1 || m.ncols() != 1 {
        return Err(CoreError::Config(format!(
            "diffusion coefficient at (t={t}, x={x}) is {}x{}, expected 1x1",
            m.nrows(),
            m.ncols()
        )));
    }
    let a = m[(0, 0)];
    if !a.is_finite() || a < 0.0 {
        return Err(CoreError::NonFinite(format!(
            "diffusion coefficient {a} at (t={t}, x={x})"
        )));
    }
    Ok(a)
}

/// Spatial operator `½α ∂²u + μ ∂u` plus the driver term, evaluated on a
/// known row by central differences. Edge entries follow the boundary kind:
/// pinned rows contribute nothing, mirrored rows use the reflected stencil
/// and a zero gradient.
#[allow(clippy::too_many_arguments)]
fn explicit_row(
    model: &DiffusionModel,
    driver: &DriverSpec,
    boundary: BoundaryKind,
    t: f64,
    xs: &[f64],
    dx: f64,
    row: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let n = xs.len();
    for i in 0..n {
        let x = xs[i];
        let ha = 0.5 * alpha_at(model, t, x)?;
        let (lap, slope) = if i == 0 || i == n - 1 {
            match boundary {
                BoundaryKind::DirichletFromTerminal => {
                    out[i] = 0.0;
                    continue;
                }
                BoundaryKind::NeumannZero => {
                    let inner = if i == 0 { row[1] } else { row[n - 2] };
                    (2.0 * (inner - row[i]) / (dx * dx), 0.0)
                }
            }
        } else {
            (
                (row[i + 1] - 2.0 * row[i] + row[i - 1]) / (dx * dx),
                (row[i + 1] - row[i - 1]) / (2.0 * dx),
            )
        };
        let mu = model.mu(t, &[x]);
        let z = 2.0 * ha * slope;
        let f = driver.eval(t, &[x], row[i], &[z]);
        if !f.is_finite() {
            return Err(CoreError::NonFinite(format!("driver value at (t={t}, x={x})")));
        }
        out[i] = ha * lap + mu[0] * slope + f;
    }
    Ok(())
}

pub fn solve_semilinear_fd(
    model: &DiffusionModel,
    driver: &DriverSpec,
    terminal: &TerminalSpec,
    cfg: &FdConfig,
) -> Result<FdSolution> {
    cfg.validate()?;
    if model.dim != 1 {
        return Err(CoreError::Config(format!(
            "the reference solver is one-dimensional; model has dimension {}",
            model.dim
        )));
    }
    let n = cfg.n_space;
    let steps = cfg.n_time;
    let xs: Vec<f64> =
        (0..n).map(|i| cfg.x_lo + (cfg.x_hi - cfg.x_lo) * i as f64 / (n - 1) as f64).collect();
    let times: Vec<f64> = (0..=steps)
        .map(|j| cfg.t0 + (cfg.t_end - cfg.t0) * j as f64 / steps as f64)
        .collect();
    let dx = (cfg.x_hi - cfg.x_lo) / (n - 1) as f64;
    let dt = (cfg.t_end - cfg.t0) / steps as f64;

    let mut values = vec![0.0; (steps + 1) * n];
    for (i, &x) in xs.iter().enumerate() {
        let g = terminal.eval(&[x]);
        if !g.is_finite() {
            return Err(CoreError::NonFinite(format!("terminal condition at x={x}")));
        }
        values[steps * n + i] = g;
    }
    let (g_lo, g_hi) = (values[steps * n], values[steps * n + n - 1]);

    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut base = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut expl = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut w_new = Vec::with_capacity(n);
    let mut scratch = Vec::new();

    for j in (0..steps).rev() {
        let (t_new, t_old) = (times[j], times[j + 1]);
        let row_old = values[(j + 1) * n..(j + 2) * n].to_vec();

        // Known-time contribution, weighted by 1 − θ.
        explicit_row(model, driver, cfg.boundary, t_old, &xs, dx, &row_old, &mut expl)?;
        for i in 0..n {
            base[i] = row_old[i] + (1.0 - cfg.theta) * dt * expl[i];
        }

        // Frozen tridiagonal operator at the unknown time.
        for i in 0..n {
            let x = xs[i];
            let ha = 0.5 * alpha_at(model, t_new, x)?;
            let k = cfg.theta * dt * ha / (dx * dx);
            if i == 0 || i == n - 1 {
                match cfg.boundary {
                    BoundaryKind::DirichletFromTerminal => {
                        sub[i] = 0.0;
                        diag[i] = 1.0;
                        sup[i] = 0.0;
                        base[i] = if i == 0 { g_lo } else { g_hi };
                    }
                    BoundaryKind::NeumannZero => {
                        diag[i] = 1.0 + 2.0 * k;
                        if i == 0 {
                            sub[i] = 0.0;
                            sup[i] = -2.0 * k;
                        } else {
                            sub[i] = -2.0 * k;
                            sup[i] = 0.0;
                        }
                    }
                }
            } else {
                let m = cfg.theta * dt * model.mu(t_new, &[x])[0] / (2.0 * dx);
                sub[i] = -(k - m);
                diag[i] = 1.0 + 2.0 * k;
                sup[i] = -(k + m);
            }
        }

        // Inner iterations: refresh the driver term at the latest iterate.
        w.copy_from_slice(&row_old);
        let mut history = Vec::with_capacity(cfg.inner_max_iter);
        let mut settled = false;
        for _ in 0..cfg.inner_max_iter {
            let pinned = matches!(cfg.boundary, BoundaryKind::DirichletFromTerminal);
            for i in 0..n {
                if pinned && (i == 0 || i == n - 1) {
                    rhs[i] = base[i];
                    continue;
                }
                let x = xs[i];
                let ha = 0.5 * alpha_at(model, t_new, x)?;
                let slope = if i == 0 || i == n - 1 {
                    0.0
                } else {
                    (w[i + 1] - w[i - 1]) / (2.0 * dx)
                };
                let f = driver.eval(t_new, &[x], w[i], &[2.0 * ha * slope]);
                if !f.is_finite() {
                    return Err(CoreError::NonFinite(format!(
                        "driver value at (t={t_new}, x={x})"
                    )));
                }
                rhs[i] = base[i] + cfg.theta * dt * f;
            }
            thomas(&sub, &diag, &sup, &rhs, &mut scratch, &mut w_new)?;
            let mut change = 0.0f64;
            for i in 0..n {
                if !w_new[i].is_finite() {
                    return Err(CoreError::NonFinite(format!(
                        "solution row at t={t_new} (inner-iteration history {history:?})"
                    )));
                }
                change = change.max((w_new[i] - w[i]).abs());
            }
            history.push(change);
            w.copy_from_slice(&w_new);
            if change <= cfg.inner_tol {
                settled = true;
                break;
            }
        }
        if !settled {
            return Err(CoreError::Numerical(format!(
                "inner iterations at t={t_new} did not settle below {}; sup-change history {:?}",
                cfg.inner_tol, history
            )));
        }
        values[j * n..(j + 1) * n].copy_from_slice(&w);
    }

    // Diffusion-weighted gradient by differencing the value grid.
    let mut flux = vec![0.0; (steps + 1) * n];
    for j in 0..=steps {
        let t = times[j];
        let row = &values[j * n..(j + 1) * n];
        for i in 0..n {
            let du = if i == 0 {
                (-3.0 * row[0] + 4.0 * row[1] - row[2]) / (2.0 * dx)
            } else if i == n - 1 {
                (3.0 * row[n - 1] - 4.0 * row[n - 2] + row[n - 3]) / (2.0 * dx)
            } else {
                (row[i + 1] - row[i - 1]) / (2.0 * dx)
            };
            flux[j * n + i] = alpha_at(model, t, xs[i])? * du;
        }
    }

    // Truncation diagnostic: a diffusion started in the central half of the
    // interval must be unlikely to touch an edge within the horizon.
    let margin = (cfg.x_hi - cfg.x_lo) / 4.0;
    let spread = (model.alpha_bound * (cfg.t_end - cfg.t0)).sqrt();
    let boundary_mass =
        if spread > 0.0 { libm::erfc(margin / (spread * std::f64::consts::SQRT_2)) } else { 0.0 };
    let boundary_warning = boundary_mass > 1e-3;

    let u = GridFunction::new(times.clone(), vec![xs.clone()], values)?;
    let flux = GridFunction::new(times, vec![xs], flux)?;
    Ok(FdSolution { u, flux, boundary_mass, boundary_warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn brownian1() -> DiffusionModel {
        DiffusionModel::brownian(1).unwrap()
    }

    fn squared() -> TerminalSpec {
        TerminalSpec::with_polynomial_growth(Arc::new(|x: &[f64]| x[0] * x[0]), 2.0, 2).unwrap()
    }

    fn sine() -> TerminalSpec {
        TerminalSpec::with_polynomial_growth(Arc::new(|x: &[f64]| x[0].sin()), 1.0, 0).unwrap()
    }

    /// Max |u − reference| over all time rows and nodes with |x| ≤ x_cap.
    fn max_interior_error(
        sol: &GridFunction,
        x_cap: f64,
        reference: impl Fn(f64, f64) -> f64,
    ) -> f64 {
        let n = sol.axes()[0].len();
        let mut worst = 0.0f64;
        for (j, &t) in sol.times().iter().enumerate() {
            for (i, &x) in sol.axes()[0].iter().enumerate() {
                if x.abs() <= x_cap {
                    worst = worst.max((sol.values()[j * n + i] - reference(t, x)).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn quadratic_terminal_reproduces_the_gaussian_moment() {
        let cfg = FdConfig { n_space: 161, n_time: 50, ..Default::default() };
        let sol = solve_semilinear_fd(&brownian1(), &DriverSpec::zero(), &squared(), &cfg)
            .unwrap();
        assert!(!sol.boundary_warning, "mass {}", sol.boundary_mass);
        let err = max_interior_error(&sol.u, 3.0, |t, x| x * x + (1.0 - t));
        assert!(err <= 1e-4, "interior error {err}");
        let flux_err = max_interior_error(&sol.flux, 3.0, |_, x| 2.0 * x);
        assert!(flux_err <= 2e-4, "flux error {flux_err}");
    }

    #[test]
    fn sine_terminal_decays_at_the_eigen_rate() {
        let cfg = FdConfig {
            x_lo: -2.0 * std::f64::consts::PI,
            x_hi: 2.0 * std::f64::consts::PI,
            n_space: 401,
            n_time: 110,
            ..Default::default()
        };
        let sol =
            solve_semilinear_fd(&brownian1(), &DriverSpec::zero(), &sine(), &cfg).unwrap();
        let err =
            max_interior_error(&sol.u, std::f64::consts::PI, |t, x| {
                (-(1.0 - t) / 2.0).exp() * x.sin()
            });
        assert!(err <= 1e-4, "interior error {err}");
        let flux_err = max_interior_error(&sol.flux, std::f64::consts::PI, |t, x| {
            (-(1.0 - t) / 2.0).exp() * x.cos()
        });
        assert!(flux_err <= 5e-4, "flux error {flux_err}");
    }

    #[test]
    fn linear_driver_discounts_the_zero_driver_solution() {
        let driver = DriverSpec::new(
            Arc::new(|_, _: &[f64], y, _: &[f64]| -0.3 * y),
            0.3,
            0.0,
            0.0,
            Arc::new(|_: &[f64]| 0.0),
        )
        .unwrap();
        let cfg = FdConfig {
            x_lo: -2.0 * std::f64::consts::PI,
            x_hi: 2.0 * std::f64::consts::PI,
            n_space: 401,
            n_time: 110,
            ..Default::default()
        };
        let sol = solve_semilinear_fd(&brownian1(), &driver, &sine(), &cfg).unwrap();
        let err = max_interior_error(&sol.u, std::f64::consts::PI, |t, x| {
            (-0.3 * (1.0 - t)).exp() * (-(1.0 - t) / 2.0).exp() * x.sin()
        });
        assert!(err <= 1e-4, "interior error {err}");
    }

    #[test]
    fn halving_both_mesh_sizes_divides_the_error_by_about_four() {
        let coarse_cfg = FdConfig {
            x_lo: -2.0 * std::f64::consts::PI,
            x_hi: 2.0 * std::f64::consts::PI,
            n_space: 81,
            n_time: 22,
            ..Default::default()
        };
        let fine_cfg = FdConfig { n_space: 161, n_time: 44, ..coarse_cfg.clone() };
        let reference =
            |t: f64, x: f64| (-(1.0 - t) / 2.0).exp() * x.sin();
        let coarse =
            solve_semilinear_fd(&brownian1(), &DriverSpec::zero(), &sine(), &coarse_cfg)
                .unwrap();
        let fine = solve_semilinear_fd(&brownian1(), &DriverSpec::zero(), &sine(), &fine_cfg)
            .unwrap();
        let e_coarse = max_interior_error(&coarse.u, std::f64::consts::PI, reference);
        let e_fine = max_interior_error(&fine.u, std::f64::consts::PI, reference);
        let ratio = e_coarse / e_fine;
        assert!(
            (3.2..=4.8).contains(&ratio),
            "refinement ratio {ratio} (errors {e_coarse} / {e_fine})"
        );
    }

    #[test]
    fn mirrored_edges_handle_a_compatible_even_terminal() {
        // cos has zero slope at ±π, so the mirror condition is exact there.
        let cosine =
            TerminalSpec::with_polynomial_growth(Arc::new(|x: &[f64]| x[0].cos()), 1.0, 0)
                .unwrap();
        let cfg = FdConfig {
            x_lo: -std::f64::consts::PI,
            x_hi: std::f64::consts::PI,
            n_space: 201,
            n_time: 60,
            boundary: BoundaryKind::NeumannZero,
            ..Default::default()
        };
        let sol =
            solve_semilinear_fd(&brownian1(), &DriverSpec::zero(), &cosine, &cfg).unwrap();
        let err = max_interior_error(&sol.u, std::f64::consts::PI / 2.0, |t, x| {
            (-(1.0 - t) / 2.0).exp() * x.cos()
        });
        assert!(err <= 5e-4, "interior error {err}");
    }

    #[test]
    fn fd_output_passes_the_mild_residual_audit() {
        // The finite-difference pair is a classical solution, so the
        // kernel-system residual checker must accept it at Monte-Carlo
        // precision.
        use crate::forward::ForwardModel;
        use crate::mild::{evaluate_mild_residuals, McSettings, MildSolutionPair, Provenance};
        use crate::operators::PsiSystem;

        let model = brownian1();
        let cfg = FdConfig {
            x_lo: -2.0 * std::f64::consts::PI,
            x_hi: 2.0 * std::f64::consts::PI,
            n_space: 201,
            n_time: 60,
            ..Default::default()
        };
        let sol =
            solve_semilinear_fd(&model, &DriverSpec::zero(), &sine(), &cfg).unwrap();
        // Provenance is bookkeeping for the two Monte-Carlo constructions;
        // the residual audit never consults it.
        let pair =
            MildSolutionPair::new(Provenance::FromFixedPoint, sol.u, vec![sol.flux]).unwrap();
        let psi = PsiSystem::coordinates(&model);
        let report = evaluate_mild_residuals(
            &pair,
            &ForwardModel::Diffusion(model),
            &psi,
            &DriverSpec::zero(),
            &sine(),
            &[(0.3, vec![0.5]), (0.0, vec![-1.0])],
            &McSettings { n_paths: 4000, steps_per_unit: 20, seed: 71 },
        )
        .unwrap();
        assert!(report.all_pass, "{:?}", report.points);
    }

    #[test]
    fn narrow_intervals_raise_the_truncation_warning() {
        let cfg = FdConfig { x_lo: -2.0, x_hi: 2.0, n_space: 41, n_time: 12, ..Default::default() };
        let sol = solve_semilinear_fd(&brownian1(), &DriverSpec::zero(), &squared(), &cfg)
            .unwrap();
        assert!(sol.boundary_warning);
        assert!(sol.boundary_mass > 1e-3);
    }

    #[test]
    fn quality_floor_rejects_too_few_time_steps() {
        let cfg = FdConfig { n_space: 161, n_time: 30, ..Default::default() };
        let err = solve_semilinear_fd(&brownian1(), &DriverSpec::zero(), &squared(), &cfg)
            .unwrap_err();
        assert!(err.to_string().contains("quality floor"));
    }

    #[test]
    fn runaway_driver_reports_the_inner_iteration_history() {
        // Contraction factor per inner iteration is roughly K_Y·θ·Δt ≈ 17,
        // so the iterates grow geometrically and must be rejected.
        let driver = DriverSpec::new(
            Arc::new(|_, _: &[f64], y, _: &[f64]| 100.0 * y),
            100.0,
            0.0,
            0.0,
            Arc::new(|_: &[f64]| 0.0),
        )
        .unwrap();
        let cfg = FdConfig {
            x_lo: -1.0,
            x_hi: 1.0,
            n_space: 9,
            n_time: 3,
            ..Default::default()
        };
        let err = solve_semilinear_fd(&brownian1(), &driver, &squared(), &cfg).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("did not settle"), "{msg}");
        assert!(msg.contains("history"), "{msg}");
    }
}
