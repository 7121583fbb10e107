//! Monte-Carlo verification of the kernel-integral identities.
//!
//! At a test point `(s, x)`, the value line demands
//! `E[g(X_T)] + E[∫_s^T f(r, X_r, u, v) dr] = u(s, x)`
//! and, for each auxiliary function `psi_i`,
//! `E[g(X_T) psi_i(T, X_T)] - E[∫_s^T (v_i + u·a(psi_i) - psi_i f) dr]
//!  = u psi_i(s, x)`.
//! Each left side is estimated as a single expectation along shared paths
//! (the time integral folded inside the path average), so every line yields
//! one mean, one standard error, and a 3·SE verdict.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::bsde::{DriverSpec, TerminalSpec};
use crate::error::{CoreError, Result};
use crate::forward::ForwardModel;
use crate::grid::TimeGrid;
use crate::mild::build::McSettings;
use crate::mild::pair::MildSolutionPair;
use crate::operators::PsiSystem;

/// Residuals of all `d + 1` lines at one test point.
#[derive(Debug, Clone, Serialize)]
pub struct PointResidual {
    pub s: f64,
    pub x: Vec<f64>,
    /// Line residuals: index 0 is the value line, 1..=d the flux lines.
    pub residuals: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub pass: Vec<bool>,
    /// Fraction of path-slice evaluations that had to be clamped to the
    /// grid hull.
    pub clamped_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub points: Vec<PointResidual>,
    pub all_pass: bool,
}

impl ResidualReport {
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)
            .map_err(|e| CoreError::Numerical(format!("report serialization failed: {e}")))
    }

    pub fn write_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_json(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Plot-ready CSV: one row per (point, line).
    pub fn write_plot_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let dim = self.points.first().map_or(0, |p| p.x.len());
        let mut header = vec!["s".to_string()];
        header.extend((1..=dim).map(|k| format!("x_{k}")));
        header.extend(["line".into(), "residual".into(), "std_error".into(), "pass".into()]);
        out.write_record(&header)?;
        for p in &self.points {
            for (line, ((res, se), ok)) in
                p.residuals.iter().zip(&p.std_errors).zip(&p.pass).enumerate()
            {
                let mut row = vec![format!("{}", p.s)];
                row.extend(p.x.iter().map(|c| format!("{c}")));
                row.push(format!("{}", line + 1));
                row.push(format!("{res}"));
                row.push(format!("{se}"));
                row.push(format!("{ok}"));
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_plot_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_plot_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Evaluates all `d + 1` residual lines at each test point.
///
/// Test points must lie inside the pair's grid hull (interpolation only, no
/// extrapolation); path excursions outside the hull during the time
/// integral are clamped to the boundary and counted in `clamped_fraction`.
pub fn evaluate_mild_residuals(
    pair: &MildSolutionPair,
    model: &ForwardModel,
    psi: &PsiSystem,
    driver: &DriverSpec,
    terminal: &TerminalSpec,
    test_points: &[(f64, Vec<f64>)],
    mc: &McSettings,
) -> Result<ResidualReport> {
    mc.validate()?;
    let d = psi.len();
    if pair.d_flux() != d {
        return Err(CoreError::Config(format!(
            "pair has {} flux components, auxiliary system has {d}",
            pair.d_flux()
        )));
    }
    if pair.dim() != model.dim() {
        return Err(CoreError::Config(format!(
            "pair dimension {} does not match model dimension {}",
            pair.dim(),
            model.dim()
        )));
    }
    let t_end = *pair.u.times().last().expect("grid has times");
    let mut points = Vec::with_capacity(test_points.len());
    let mut all_pass = true;

    for (idx, (s, x)) in test_points.iter().enumerate() {
        // The test point itself must be interpolable: out-of-hull here is an
        // extrapolation request, which is an error rather than a clamp.
        let u_sx = pair.u.eval(*s, x)?;
        if !(*s < t_end) {
            return Err(CoreError::Config(format!(
                "test point at s={s} is not before the terminal time {t_end}"
            )));
        }
        let steps = mc.steps_for(t_end - s);
        let grid = TimeGrid::uniform(*s, t_end, steps)?;
        let ens = model.simulate(*s, x, &grid, mc.n_paths, mc.node_seed(idx))?;
        let psi_sx: Vec<f64> = (0..d).map(|i| psi.psi(i).eval(*s, x)).collect();

        let n = ens.n_paths();
        let mut sums = vec![0.0; d + 1];
        let mut sq_sums = vec![0.0; d + 1];
        let mut clamped: u64 = 0;
        let mut total_evals: u64 = 0;
        for p in 0..n {
            let x_t = ens.state(p, steps);
            let g_t = terminal.eval(x_t);
            if !g_t.is_finite() {
                return Err(CoreError::NonFinite(format!(
                    "terminal condition along path {p} at point (s={s}, x={x:?})"
                )));
            }
            let mut int_f = 0.0;
            let mut int_w = vec![0.0; d];
            for r in 0..steps {
                let t_r = grid.time(r);
                let dv = grid.dv(r);
                let x_r = ens.state(p, r);
                let (u_r, c1) = pair.u_clamped(t_r, x_r)?;
                let (v_r, c2) = pair.v_clamped(t_r, x_r)?;
                clamped += (c1 || c2) as u64;
                total_evals += 1;
                let f_r = driver.eval(t_r, x_r, u_r, &v_r);
                if !f_r.is_finite() {
                    return Err(CoreError::NonFinite(format!(
                        "driver along path {p} at t={t_r}"
                    )));
                }
                int_f += f_r * dv;
                for i in 0..d {
                    let w = v_r[i] + u_r * psi.a_psi(i, t_r, x_r) - psi.psi(i).eval(t_r, x_r) * f_r;
                    int_w[i] += w * dv;
                }
            }
            let line1 = g_t + int_f - u_sx;
            sums[0] += line1;
            sq_sums[0] += line1 * line1;
            for i in 0..d {
                let line = g_t * psi.psi(i).eval(t_end, x_t) - int_w[i] - u_sx * psi_sx[i];
                sums[i + 1] += line;
                sq_sums[i + 1] += line * line;
            }
        }

        let nf = n as f64;
        let mut residuals = Vec::with_capacity(d + 1);
        let mut std_errors = Vec::with_capacity(d + 1);
        let mut pass = Vec::with_capacity(d + 1);
        for line in 0..=d {
            let mean = sums[line] / nf;
            let var = (sq_sums[line] / nf - mean * mean).max(0.0);
            let se = (var / (nf - 1.0)).sqrt();
            if !mean.is_finite() || !se.is_finite() {
                return Err(CoreError::NonFinite(format!(
                    "residual line {} at point (s={s}, x={x:?})",
                    line + 1
                )));
            }
            pass.push(mean.abs() <= 3.0 * se);
            residuals.push(mean);
            std_errors.push(se);
        }
        all_pass &= pass.iter().all(|p| *p);
        points.push(PointResidual {
            s: *s,
            x: x.clone(),
            residuals,
            std_errors,
            pass,
            clamped_fraction: if total_evals == 0 {
                0.0
            } else {
                clamped as f64 / total_evals as f64
            },
        });
    }
    Ok(ResidualReport { points, all_pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{DiffusionModel, DistributionalDriftModel};
    use crate::mild::pair::{Provenance, SpaceTimeNodes};
    use crate::operators::GridFunction;
    use std::sync::Arc;

    fn brownian() -> (ForwardModel, PsiSystem) {
        let model = DiffusionModel::brownian(1).unwrap();
        let psi = PsiSystem::coordinates(&model);
        (ForwardModel::Diffusion(model), psi)
    }

    fn grid_pair(
        u: impl Fn(f64, &[f64]) -> f64,
        v: impl Fn(f64, &[f64]) -> f64,
    ) -> MildSolutionPair {
        let nodes = SpaceTimeNodes::new(
            (0..=10).map(|k| k as f64 / 10.0).collect(),
            vec![(0..=80).map(|m| -4.0 + m as f64 / 10.0).collect()],
        )
        .unwrap();
        let gu = GridFunction::from_fn(nodes.times().to_vec(), nodes.axes().to_vec(), u).unwrap();
        let gv = GridFunction::from_fn(nodes.times().to_vec(), nodes.axes().to_vec(), v).unwrap();
        MildSolutionPair::new(Provenance::FromBsde, gu, vec![gv]).unwrap()
    }

    #[test]
    fn constant_pair_zero_driver_has_identically_zero_value_line() {
        let (model, psi) = brownian();
        let pair = grid_pair(|_, _| 2.5, |_, _| 0.0);
        let terminal =
            TerminalSpec::with_polynomial_growth(Arc::new(|_: &[f64]| 2.5), 3.0, 0).unwrap();
        let mc = McSettings { n_paths: 2000, steps_per_unit: 10, seed: 51 };
        let report = evaluate_mild_residuals(
            &pair,
            &model,
            &psi,
            &DriverSpec::zero(),
            &terminal,
            &[(0.0, vec![0.0]), (0.5, vec![1.0])],
            &mc,
        )
        .unwrap();
        for point in &report.points {
            // Every path sample of the value line is c + 0 - c = 0.
            assert_eq!(point.residuals[0], 0.0);
            assert_eq!(point.std_errors[0], 0.0);
            assert!(point.pass[0]);
            // The flux line is a plain martingale-increment average.
            assert!(point.pass[1], "flux line: {} vs {}", point.residuals[1], point.std_errors[1]);
        }
        assert!(report.all_pass);
    }

    #[test]
    fn exact_quadratic_pair_passes_every_line() {
        let (model, psi) = brownian();
        let pair = grid_pair(|t, x| x[0] * x[0] + (1.0 - t), |_, x| 2.0 * x[0]);
        let terminal =
            TerminalSpec::with_polynomial_growth(Arc::new(|x: &[f64]| x[0] * x[0]), 2.0, 2)
                .unwrap();
        let mc = McSettings { n_paths: 4000, steps_per_unit: 20, seed: 52 };
        let points: Vec<(f64, Vec<f64>)> = vec![
            (0.0, vec![0.0]),
            (0.0, vec![1.0]),
            (0.5, vec![-1.0]),
            (0.5, vec![0.5]),
            (0.9, vec![0.0]),
        ];
        let report = evaluate_mild_residuals(
            &pair,
            &model,
            &psi,
            &DriverSpec::zero(),
            &terminal,
            &points,
            &mc,
        )
        .unwrap();
        assert!(report.all_pass, "{:?}", report.points);
        for point in &report.points {
            assert!(point.clamped_fraction < 0.01);
        }
    }

    #[test]
    fn uniform_offset_breaks_the_value_line_everywhere() {
        let (model, psi) = brownian();
        let pair = grid_pair(|t, x| x[0] * x[0] + (1.0 - t) + 0.1, |_, x| 2.0 * x[0]);
        let terminal =
            TerminalSpec::with_polynomial_growth(Arc::new(|x: &[f64]| x[0] * x[0]), 2.0, 2)
                .unwrap();
        let mc = McSettings { n_paths: 4000, steps_per_unit: 20, seed: 53 };
        let points: Vec<(f64, Vec<f64>)> =
            vec![(0.0, vec![0.0]), (0.5, vec![1.0]), (0.8, vec![-0.5])];
        let report = evaluate_mild_residuals(
            &pair,
            &model,
            &psi,
            &DriverSpec::zero(),
            &terminal,
            &points,
            &mc,
        )
        .unwrap();
        assert!(!report.all_pass);
        for point in &report.points {
            // The offset shifts the value line by exactly -0.1 and the MC
            // error is far smaller, so the line fails at every point.
            assert!(!point.pass[0], "value line passed at (s={}, x={:?})", point.s, point.x);
            assert!(
                (point.residuals[0] + 0.1).abs() <= 3.0 * point.std_errors[0],
                "residual {} not near -0.1",
                point.residuals[0]
            );
        }
    }

    #[test]
    fn test_point_outside_the_hull_is_an_extrapolation_error() {
        let (model, psi) = brownian();
        let pair = grid_pair(|_, _| 1.0, |_, _| 0.0);
        let terminal =
            TerminalSpec::with_polynomial_growth(Arc::new(|_: &[f64]| 1.0), 1.0, 0).unwrap();
        let mc = McSettings { n_paths: 100, steps_per_unit: 4, seed: 54 };
        let err = evaluate_mild_residuals(
            &pair,
            &model,
            &psi,
            &DriverSpec::zero(),
            &terminal,
            &[(0.0, vec![7.5])],
            &mc,
        );
        assert!(matches!(err, Err(CoreError::Domain(_))));
    }

    #[test]
    fn scale_pair_of_the_irregular_model_passes_both_lines() {
        // Sigma = 2|x|, sigma = 1: u(s,x) = h(x) with flux (sigma h')^2 is
        // the exact pair for f = 0, g = h, psi = h.
        let model = DistributionalDriftModel::build(
            Arc::new(|_| 1.0),
            Arc::new(|x: f64| 2.0 * x.abs()),
            0.0,
            1.0,
            1e-16,
            1.0,
            8192,
        )
        .unwrap();
        let psi = PsiSystem::scale(&model);
        let h = model.h.clone();
        let (hx_min, hx_max) = (h.x_min(), h.x_max());
        let h_eval = move |x: f64| h.eval(x.clamp(hx_min, hx_max)).expect("clamped");
        let nodes = SpaceTimeNodes::new(
            (0..=5).map(|k| k as f64 / 5.0).collect(),
            vec![(0..=40).map(|m| -1.0 + m as f64 / 20.0).collect()],
        )
        .unwrap();
        let h_u = h_eval.clone();
        let gu = GridFunction::from_fn(nodes.times().to_vec(), nodes.axes().to_vec(), move |_, x| {
            h_u(x[0])
        })
        .unwrap();
        let m2 = model.clone();
        let gv = GridFunction::from_fn(nodes.times().to_vec(), nodes.axes().to_vec(), move |_, x| {
            let sh = m2.sigma(x[0]) * m2.h_prime(x[0]);
            sh * sh
        })
        .unwrap();
        let pair = MildSolutionPair::new(Provenance::FromBsde, gu, vec![gv]).unwrap();
        let h_g = h_eval.clone();
        let terminal =
            TerminalSpec::with_polynomial_growth(Arc::new(move |x: &[f64]| h_g(x[0])), 1.0, 1)
                .unwrap();
        let mc = McSettings { n_paths: 3000, steps_per_unit: 200, seed: 55 };
        let report = evaluate_mild_residuals(
            &pair,
            &ForwardModel::DistributionalDrift(model),
            &psi,
            &DriverSpec::zero(),
            &terminal,
            &[(0.0, vec![0.2]), (0.4, vec![-0.2])],
            &mc,
        )
        .unwrap();
        assert!(report.all_pass, "{:?}", report.points);
    }

    #[test]
    fn report_serializes_to_json_and_plot_csv() {
        let (model, psi) = brownian();
        let pair = grid_pair(|_, _| 2.5, |_, _| 0.0);
        let terminal =
            TerminalSpec::with_polynomial_growth(Arc::new(|_: &[f64]| 2.5), 3.0, 0).unwrap();
        let mc = McSettings { n_paths: 500, steps_per_unit: 4, seed: 56 };
        let report = evaluate_mild_residuals(
            &pair,
            &model,
            &psi,
            &DriverSpec::zero(),
            &terminal,
            &[(0.0, vec![0.0])],
            &mc,
        )
        .unwrap();
        let mut json = Vec::new();
        report.write_json(&mut json).unwrap();
        let parsed: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert_eq!(parsed["all_pass"], serde_json::Value::Bool(true));
        assert_eq!(parsed["points"][0]["residuals"][0], 0.0);

        let mut csv_buf = Vec::new();
        report.write_plot_csv(&mut csv_buf).unwrap();
        let text = String::from_utf8(csv_buf).unwrap();
        assert!(text.starts_with("s,x_1,line,residual,std_error,pass"));
        assert_eq!(text.lines().count(), 3); // header + 2 lines for 1 point
    }
}
