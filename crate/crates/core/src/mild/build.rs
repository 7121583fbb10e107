//! Assembling the grid pair from per-node backward solves.

use crate::bsde::{solve_markovian, DriverSpec, PicardConfig, TerminalSpec};
use crate::error::{CoreError, Result};
use crate::forward::ForwardModel;
use crate::grid::TimeGrid;
use crate::mild::pair::{MildSolutionPair, Provenance, SpaceTimeNodes};
use crate::operators::{GridFunction, PsiSystem};

/// Monte-Carlo sizing shared by the mild-system estimators.
#[derive(Debug, Clone)]
pub struct McSettings {
    pub n_paths: usize,
    /// Time steps per unit of time; each sub-simulation uses at least one.
    pub steps_per_unit: usize,
    pub seed: u64,
}

impl McSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || self.steps_per_unit == 0 {
            return Err(CoreError::Config(
                "path count and step rate must both be positive".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn steps_for(&self, span: f64) -> usize {
        ((span * self.steps_per_unit as f64).ceil() as usize).max(1)
    }

    /// Per-node seed: one fixed stream per start node, stable across sweeps.
    pub(crate) fn node_seed(&self, node_index: usize) -> u64 {
        self.seed ^ (node_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// A node whose backward solve failed, with its coordinates and the error.
#[derive(Debug, Clone)]
pub struct NodeFailure {
    pub time_index: usize,
    pub space_index: usize,
    pub s: f64,
    pub x: Vec<f64>,
    pub message: String,
}

/// Outcome of a node-by-node build: the finished pair when every node
/// succeeded, plus whatever was computed when some failed.
#[derive(Debug)]
pub struct BuildOutcome {
    pub pair: Option<MildSolutionPair>,
    pub failures: Vec<NodeFailure>,
    /// Partial node values (time-major, then row-major over space); `None`
    /// marks a failed node. Retained so a partial run is not wasted.
    pub partial_u: Vec<Option<f64>>,
    pub partial_v: Vec<Vec<Option<f64>>>,
    /// Monte-Carlo standard error of each node value (0 on the terminal row,
    /// which is evaluated exactly).
    pub partial_u_se: Vec<Option<f64>>,
}

/// Runs the backward solver from every interior node and collects
/// `u(s,x) = Y^{s,x}_s` and `v(s,x) =` the start-slice flux estimate.
///
/// The terminal row is filled directly from the terminal condition, and the
/// flux's terminal row copies the last interior row (the backward solve has
/// no increments at the terminal time). All nodes are attempted even when
/// some fail; failures are listed in the outcome with partial results.
pub fn build_u_from_bsde(
    model: &ForwardModel,
    psi: Option<&PsiSystem>,
    driver: &DriverSpec,
    terminal: &TerminalSpec,
    nodes: &SpaceTimeNodes,
    mc: &McSettings,
    cfg: &PicardConfig,
) -> Result<BuildOutcome> {
    mc.validate()?;
    cfg.validate()?;
    if nodes.dim() != model.dim() {
        return Err(CoreError::Config(format!(
            "node set has dimension {}, model has {}",
            nodes.dim(),
            model.dim()
        )));
    }
    let times = nodes.times();
    let t_end = nodes.terminal_time();
    let n_space = nodes.n_space();
    let n_times = times.len();
    let mut d_flux: Option<usize> = None;

    let mut partial_u: Vec<Option<f64>> = vec![None; n_times * n_space];
    let mut partial_u_se: Vec<Option<f64>> = vec![None; n_times * n_space];
    let mut partial_v: Vec<Vec<Option<f64>>> = Vec::new();
    let mut failures: Vec<NodeFailure> = Vec::new();

    for ti in 0..n_times - 1 {
        let s = times[ti];
        for flat in 0..n_space {
            let x = nodes.space_node(flat);
            let node_index = ti * n_space + flat;
            let steps = mc.steps_for(t_end - s);
            let solved = TimeGrid::uniform(s, t_end, steps).and_then(|grid| {
                solve_markovian(
                    model,
                    psi,
                    driver,
                    terminal,
                    s,
                    &x,
                    &grid,
                    mc.n_paths,
                    mc.node_seed(node_index),
                    cfg,
                )
            });
            match solved {
                Ok(sol) => {
                    if d_flux.is_none() {
                        d_flux = Some(sol.z_at_start.len());
                        partial_v = vec![vec![None; n_times * n_space]; sol.z_at_start.len()];
                    }
                    partial_u[node_index] = Some(sol.u);
                    partial_u_se[node_index] = Some(sol.u_se);
                    for (i, z) in sol.z_at_start.iter().enumerate() {
                        partial_v[i][node_index] = Some(*z);
                    }
                }
                Err(err) => failures.push(NodeFailure {
                    time_index: ti,
                    space_index: flat,
                    s,
                    x,
                    message: err.to_string(),
                }),
            }
        }
    }

    // Terminal row: the condition itself, evaluated exactly.
    for flat in 0..n_space {
        let x = nodes.space_node(flat);
        let g = terminal.eval(&x);
        if !g.is_finite() {
            return Err(CoreError::NonFinite(format!(
                "terminal condition at node x={x:?}"
            )));
        }
        partial_u[(n_times - 1) * n_space + flat] = Some(g);
        partial_u_se[(n_times - 1) * n_space + flat] = Some(0.0);
    }

    if failures.is_empty() {
        let d = d_flux.expect("at least one interior node solved");
        // Flux terminal row: copy the last interior row.
        for i in 0..d {
            for flat in 0..n_space {
                partial_v[i][(n_times - 1) * n_space + flat] =
                    partial_v[i][(n_times - 2) * n_space + flat];
            }
        }
        let u_values: Vec<f64> = partial_u.iter().map(|v| v.expect("no failures")).collect();
        let u = GridFunction::new(times.to_vec(), nodes.axes().to_vec(), u_values)?;
        let mut v = Vec::with_capacity(d);
        for comp in &partial_v {
            let vals: Vec<f64> = comp.iter().map(|v| v.expect("no failures")).collect();
            v.push(GridFunction::new(times.to_vec(), nodes.axes().to_vec(), vals)?);
        }
        let pair = MildSolutionPair::new(Provenance::FromBsde, u, v)?;
        Ok(BuildOutcome { pair: Some(pair), failures, partial_u, partial_v, partial_u_se })
    } else {
        Ok(BuildOutcome { pair: None, failures, partial_u, partial_v, partial_u_se })
    }
}

/// Like [`build_u_from_bsde`], but node failures become an error whose
/// message lists every failed node.
pub fn build_u_from_bsde_strict(
    model: &ForwardModel,
    psi: Option<&PsiSystem>,
    driver: &DriverSpec,
    terminal: &TerminalSpec,
    nodes: &SpaceTimeNodes,
    mc: &McSettings,
    cfg: &PicardConfig,
) -> Result<MildSolutionPair> {
    let outcome = build_u_from_bsde(model, psi, driver, terminal, nodes, mc, cfg)?;
    match outcome.pair {
        Some(pair) => Ok(pair),
        None => {
            let list: Vec<String> = outcome
                .failures
                .iter()
                .map(|f| format!("(s={}, x={:?}): {}", f.s, f.x, f.message))
                .collect();
            Err(CoreError::Config(format!(
                "{} node solves failed: [{}]",
                list.len(),
                list.join("; ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::DiffusionModel;
    use std::sync::Arc;

    fn brownian() -> ForwardModel {
        ForwardModel::Diffusion(DiffusionModel::brownian(1).unwrap())
    }

    fn small_nodes() -> SpaceTimeNodes {
        SpaceTimeNodes::new(
            vec![0.0, 0.25, 0.5, 0.75, 1.0],
            vec![vec![-1.0, -0.5, 0.0, 0.5, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn constant_terminal_fills_the_whole_grid_exactly() {
        let terminal =
            TerminalSpec::with_polynomial_growth(Arc::new(|_: &[f64]| 2.5), 3.0, 0).unwrap();
        let mc = McSettings { n_paths: 200, steps_per_unit: 8, seed: 41 };
        let pair = build_u_from_bsde_strict(
            &brownian(),
            None,
            &DriverSpec::zero(),
            &terminal,
            &small_nodes(),
            &mc,
            &PicardConfig::default(),
        )
        .unwrap();
        assert_eq!(pair.provenance, Provenance::FromBsde);
        for &u in pair.u.values() {
            assert_eq!(u, 2.5);
        }
        for &v in pair.v[0].values() {
            assert_eq!(v, 0.0);
        }
        pair.verify_terminal(|_| 2.5).unwrap();
    }

    #[test]
    fn squared_terminal_matches_the_gaussian_closed_form() {
        let terminal =
            TerminalSpec::with_polynomial_growth(Arc::new(|x: &[f64]| x[0] * x[0]), 2.0, 2)
                .unwrap();
        let mc = McSettings { n_paths: 100_000, steps_per_unit: 20, seed: 42 };
        let pair = build_u_from_bsde_strict(
            &brownian(),
            None,
            &DriverSpec::zero(),
            &terminal,
            &small_nodes(),
            &mc,
            &PicardConfig::default(),
        )
        .unwrap();
        let nodes = small_nodes();
        for (ti, &s) in nodes.times().iter().enumerate() {
            for flat in 0..nodes.n_space() {
                let x = nodes.space_node(flat)[0];
                let got = pair.u.values()[ti * nodes.n_space() + flat];
                let want = x * x + (1.0 - s);
                assert!(
                    (got - want).abs() <= 0.03,
                    "node (s={s}, x={x}): {got} vs {want}"
                );
            }
        }

        // The stored flux should track the gradient form of the known
        // solution, 2x, across the interior rows.
        let mut sq = 0.0;
        let mut count = 0;
        for ti in 0..nodes.times().len() - 1 {
            for flat in 0..nodes.n_space() {
                let x = nodes.space_node(flat)[0];
                let got = pair.v[0].values()[ti * nodes.n_space() + flat];
                sq += (got - 2.0 * x) * (got - 2.0 * x);
                count += 1;
            }
        }
        let rms = (sq / count as f64).sqrt();
        assert!(rms <= 0.1, "flux RMS error {rms} against the gradient form");
    }

    #[test]
    fn linear_driver_matches_the_backward_ode() {
        let driver = DriverSpec::new(
            Arc::new(|_, _: &[f64], y, _: &[f64]| -y),
            1.0,
            0.0,
            0.0,
            Arc::new(|_: &[f64]| 0.0),
        )
        .unwrap();
        let terminal =
            TerminalSpec::with_polynomial_growth(Arc::new(|_: &[f64]| 1.0), 1.0, 0).unwrap();
        let mc = McSettings { n_paths: 64, steps_per_unit: 50, seed: 43 };
        let cfg = PicardConfig { max_iter: 60, tol: Some(1e-14), ..Default::default() };
        let pair = build_u_from_bsde_strict(
            &brownian(),
            None,
            &driver,
            &terminal,
            &small_nodes(),
            &mc,
            &cfg,
        )
        .unwrap();
        let nodes = small_nodes();
        for (ti, &s) in nodes.times().iter().enumerate() {
            for flat in 0..nodes.n_space() {
                let got = pair.u.values()[ti * nodes.n_space() + flat];
                let want = (-(1.0 - s)).exp();
                assert!(
                    (got - want).abs() <= 0.02,
                    "node (s={s}, flat {flat}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn node_failures_are_listed_and_partial_results_kept() {
        // A driver undefined before t = 0.2 wrecks exactly the s = 0 row
        // (those solves evaluate it at t = 0); later rows never see small t.
        let driver = DriverSpec::new(
            Arc::new(|t: f64, _: &[f64], y, _: &[f64]| if t < 0.2 { f64::NAN } else { -y }),
            1.0,
            0.0,
            0.0,
            Arc::new(|_: &[f64]| 0.0),
        )
        .unwrap();
        let terminal =
            TerminalSpec::with_polynomial_growth(Arc::new(|_: &[f64]| 1.0), 1.0, 0).unwrap();
        let mc = McSettings { n_paths: 100, steps_per_unit: 4, seed: 44 };
        let outcome = build_u_from_bsde(
            &brownian(),
            None,
            &driver,
            &terminal,
            &small_nodes(),
            &mc,
            &PicardConfig::default(),
        )
        .unwrap();
        assert!(outcome.pair.is_none());
        let nodes = small_nodes();
        assert_eq!(outcome.failures.len(), nodes.n_space()); // the whole s=0 row
        assert!(outcome.failures.iter().all(|f| f.s == 0.0));
        // Partial results retained everywhere else.
        for flat in 0..nodes.n_space() {
            assert!(outcome.partial_u[flat].is_none());
            for ti in 1..nodes.times().len() - 1 {
                assert!(outcome.partial_u[ti * nodes.n_space() + flat].is_some());
            }
        }

        let err = build_u_from_bsde_strict(
            &brownian(),
            None,
            &driver,
            &terminal,
            &small_nodes(),
            &mc,
            &PicardConfig::default(),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("5 node solves failed"), "{msg}");
        assert!(msg.contains("s=0"), "{msg}");
    }
}
