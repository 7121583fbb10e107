//! Point evaluation of the backward solution started from a fixed state.
//!
//! All paths share the start state, so the start-slice regression collapses
//! to a plain Monte-Carlo average; the fitted value at the start slice *is*
//! the estimate of `u(s, x)`, and the start-slice bracket regressions give
//! the flux components `v_i(s, x)`.

use crate::bsde::basis::RegressionBasis;
use crate::bsde::picard::{picard_solve, psi_martingale_increments, BsdeSolution, PicardConfig};
use crate::bsde::types::{DriverSpec, TerminalSpec};
use crate::error::{CoreError, Result};
use crate::forward::{simulate_diffusion, simulate_distributional_drift, ForwardModel, PathEnsemble};
use crate::grid::TimeGrid;
use crate::operators::PsiSystem;

/// Backward solution together with its point estimate at the start node.
#[derive(Debug, Clone)]
pub struct MarkovianSolution {
    pub solution: BsdeSolution,
    pub ensemble: PathEnsemble,
    /// Estimate of the value at the start node and its standard error.
    pub u: f64,
    pub u_se: f64,
    /// Estimates of the flux components at the start node.
    pub z_at_start: Vec<f64>,
    pub z_at_start_se: Vec<f64>,
}

/// Simulates the forward model from `(s, x)`, runs the Picard iteration, and
/// reads off the start-node estimates.
///
/// `psi_override` substitutes a caller-supplied auxiliary system; when
/// `None`, coordinate functions are used for regular diffusions and the
/// model's scale function for distributional-drift models (built from the
/// post-simulation model so any tabulation extension is reflected).
#[allow(clippy::too_many_arguments)]
pub fn solve_markovian(
    model: &ForwardModel,
    psi_override: Option<&PsiSystem>,
    driver: &DriverSpec,
    terminal: &TerminalSpec,
    s: f64,
    x: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    cfg: &PicardConfig,
) -> Result<MarkovianSolution> {
    if grid.t0() != s {
        return Err(CoreError::Config(format!(
            "grid starts at {}, requested start time {s}",
            grid.t0()
        )));
    }
    if x.len() != model.dim() {
        return Err(CoreError::Config(format!(
            "start state has dimension {}, model has {}",
            x.len(),
            model.dim()
        )));
    }
    let (ensemble, system) = match model {
        ForwardModel::Diffusion(m) => {
            let ens = simulate_diffusion(m, s, x, grid, n_paths, seed)?;
            let system = match psi_override {
                Some(sys) => sys.clone(),
                None => PsiSystem::coordinates(m),
            };
            (ens, system)
        }
        ForwardModel::DistributionalDrift(m) => {
            let sim = simulate_distributional_drift(m, s, x[0], grid, n_paths, seed)?;
            let system = match psi_override {
                Some(sys) => sys.clone(),
                None => PsiSystem::scale(&sim.model),
            };
            (sim.ensemble, system)
        }
    };
    let psi = psi_martingale_increments(&ensemble, &system)?;
    let solution = picard_solve(&ensemble, &psi, driver, terminal, cfg)?;
    // Start-slice features are constant across paths, so the fitted start
    // values are the target means; read them from any path.
    let u = solution.y(0, 0);
    let z_at_start: Vec<f64> = (0..solution.d_psi).map(|i| solution.z(0, 0, i)).collect();
    Ok(MarkovianSolution {
        u,
        u_se: solution.start_target_se,
        z_at_start,
        z_at_start_se: solution.start_z_se.clone(),
        solution,
        ensemble,
    })
}

/// Convenience wrapper: coordinate auxiliary system, default basis.
#[allow(clippy::too_many_arguments)]
pub fn solve_markovian_default(
    model: &ForwardModel,
    driver: &DriverSpec,
    terminal: &TerminalSpec,
    s: f64,
    x: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<MarkovianSolution> {
    solve_markovian(
        model,
        None,
        driver,
        terminal,
        s,
        x,
        grid,
        n_paths,
        seed,
        &PicardConfig { basis: RegressionBasis::default(), ..Default::default() },
    )
}
