//! Experiment configs: a TOML schema validated before any compute starts.
//!
//! Unknown keys are rejected, every diagnostic carries the dotted path of
//! the offending key, and coefficient strings are compiled once here so a
//! bad expression can never surface mid-run.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Deserialize;

use ppde_core::bsde::{DriverFn, DriverSpec, MomentFn, PicardConfig, RegressionBasis, TerminalFn, TerminalSpec};
use ppde_core::forward::{
    DiffusionMatrixFn, DiffusionModel, DistributionalDriftModel, DriftFn, ForwardModel, ScalarFn,
};
use ppde_core::operators::PsiSystem;

use crate::error::{CliError, CliResult};
use crate::expr::{self, Compiled};

fn default_dim() -> usize {
    1
}
fn default_resolution() -> usize {
    4096
}
fn default_zero_expr() -> String {
    "0".to_string()
}
fn default_one() -> f64 {
    1.0
}
fn default_power() -> u32 {
    2
}
fn default_degree() -> u32 {
    4
}
fn default_ridge() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    25
}
fn default_verif_paths() -> usize {
    4000
}
fn default_steps_per_unit() -> usize {
    16
}
fn default_max_sweeps() -> usize {
    25
}
fn default_sweep_tol() -> f64 {
    1e-4
}
fn default_out_dir() -> String {
    "out".to_string()
}
fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Bin, OutputFormat::Csv, OutputFormat::Json]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Brownian,
    Diffusion,
    DistributionalDrift,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Drift components, one expression of `t, x1..xd` per coordinate.
    pub mu: Option<Vec<String>>,
    /// Diffusion matrix entries, row-major, expressions of `t, x1..xd`.
    pub alpha: Option<Vec<Vec<String>>>,
    pub mu_bound: Option<f64>,
    pub alpha_bound: Option<f64>,
    /// Distributional drift: multiplier `sigma(x)` and antiderivative-of-drift
    /// `sigma_big(x)`, both expressions of `x1` alone.
    pub sigma: Option<String>,
    pub sigma_big: Option<String>,
    pub c1: Option<f64>,
    pub c_big1: Option<f64>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSection {
    /// Expression of `t, x1..xd, y, z1..zd`.
    #[serde(default = "default_zero_expr")]
    pub f: String,
    #[serde(default)]
    pub k_y: f64,
    #[serde(default)]
    pub k_z: f64,
    #[serde(default = "default_one")]
    pub growth: f64,
    /// Growth envelope of `f(t, x, 0, 0)`, an expression of `x1..xd`.
    pub eta: Option<String>,
}

impl Default for DriverSection {
    fn default() -> Self {
        Self { f: default_zero_expr(), k_y: 0.0, k_z: 0.0, growth: default_one(), eta: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSection {
    /// Expression of `x1..xd`.
    pub g: String,
    #[serde(default = "default_one")]
    pub growth: f64,
    #[serde(default = "default_power")]
    pub power: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default)]
    pub s: f64,
    pub x: Vec<f64>,
    pub t_end: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    #[serde(default = "default_degree")]
    pub basis_degree: u32,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    pub tol: Option<f64>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VerificationMethod {
    #[default]
    FromBsde,
    FixedPoint,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationSection {
    /// Node times of the space-time grid, ascending, last = horizon.
    pub times: Vec<f64>,
    /// One ascending axis per space dimension.
    pub x_axes: Vec<Vec<f64>>,
    #[serde(default)]
    pub method: VerificationMethod,
    /// Paths per node build and per residual check.
    #[serde(default = "default_verif_paths")]
    pub n_paths: usize,
    #[serde(default = "default_steps_per_unit")]
    pub steps_per_unit: usize,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    #[serde(default = "default_sweep_tol")]
    pub sweep_tol: f64,
    /// Residual check points, one `[s, x1..xd]` row each.
    #[serde(default)]
    pub test_points: Vec<Vec<f64>>,
    /// Paths for the residual check itself (default: `n_paths`). Builds
    /// should use several times more paths than the check, since the check's
    /// standard errors cannot see the Monte-Carlo error frozen into the
    /// stored nodes.
    pub check_n_paths: Option<usize>,
    pub check_steps_per_unit: Option<usize>,
    /// Debug/demo perturbation added to every stored `u` node before
    /// verification; a nonzero value should make `verify` fail.
    pub u_offset: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Bin,
    Csv,
    Json,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_out_dir(), formats: default_formats() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSection,
    #[serde(default)]
    pub driver: DriverSection,
    pub terminal: TerminalSection,
    pub solver: SolverSection,
    pub verification: Option<VerificationSection>,
    #[serde(default)]
    pub output: OutputSection,
}

/// Parses and validates a config file. Schema violations and semantic
/// problems both come back as usage errors naming the offending key.
pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let de = toml::Deserializer::new(&text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let key = if key.is_empty() || key == "." { "(top level)".to_string() } else { key };
        CliError::Usage(format!("{}: {key}: {}", path.display(), e.inner().message()))
    })?;
    validate(&cfg).map_err(|msg| CliError::Usage(format!("{}: {msg}", path.display())))?;
    Ok(cfg)
}

fn check_expr(src: &str, vars: &[String], key: &str) -> Result<Compiled, String> {
    let refs: Vec<&str> = vars.iter().map(String::as_str).collect();
    expr::compile(src, &refs).map_err(|e| format!("{key}: {e}"))
}

fn require<T: Copy>(field: Option<T>, key: &str) -> Result<T, String> {
    field.ok_or_else(|| format!("{key}: required for this model kind"))
}

fn finite(v: f64, key: &str) -> Result<f64, String> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{key}: must be finite, got {v}"))
    }
}

fn forbid<T>(field: &Option<T>, key: &str, kind: &str) -> Result<(), String> {
    if field.is_some() {
        return Err(format!("{key}: not used when model.kind = {kind:?}"));
    }
    Ok(())
}

fn validate(cfg: &ExperimentConfig) -> Result<(), String> {
    let m = &cfg.model;
    if m.dim == 0 {
        return Err("model.dim: must be at least 1".into());
    }
    let st_vars = expr::spacetime_vars(m.dim);
    match m.kind {
        ModelKind::Brownian => {
            forbid(&m.mu, "model.mu", "brownian")?;
            forbid(&m.alpha, "model.alpha", "brownian")?;
            forbid(&m.sigma, "model.sigma", "brownian")?;
            forbid(&m.sigma_big, "model.sigma_big", "brownian")?;
            forbid(&m.c1, "model.c1", "brownian")?;
            forbid(&m.c_big1, "model.c_big1", "brownian")?;
        }
        ModelKind::Diffusion => {
            forbid(&m.sigma, "model.sigma", "diffusion")?;
            forbid(&m.sigma_big, "model.sigma_big", "diffusion")?;
            forbid(&m.c1, "model.c1", "diffusion")?;
            forbid(&m.c_big1, "model.c_big1", "diffusion")?;
            let mu = m.mu.as_ref().ok_or("model.mu: required for this model kind")?;
            if mu.len() != m.dim {
                return Err(format!("model.mu: expected {} components, got {}", m.dim, mu.len()));
            }
            for (i, src) in mu.iter().enumerate() {
                check_expr(src, &st_vars, &format!("model.mu[{i}]"))?;
            }
            let alpha = m.alpha.as_ref().ok_or("model.alpha: required for this model kind")?;
            if alpha.len() != m.dim {
                return Err(format!("model.alpha: expected {} rows, got {}", m.dim, alpha.len()));
            }
            for (i, row) in alpha.iter().enumerate() {
                if row.len() != m.dim {
                    return Err(format!(
                        "model.alpha[{i}]: expected {} entries, got {}",
                        m.dim,
                        row.len()
                    ));
                }
                for (j, src) in row.iter().enumerate() {
                    check_expr(src, &st_vars, &format!("model.alpha[{i}][{j}]"))?;
                }
            }
            finite(require(m.mu_bound, "model.mu_bound")?, "model.mu_bound")?;
            finite(require(m.alpha_bound, "model.alpha_bound")?, "model.alpha_bound")?;
        }
        ModelKind::DistributionalDrift => {
            if m.dim != 1 {
                return Err("model.dim: distributional_drift is one-dimensional".into());
            }
            forbid(&m.mu, "model.mu", "distributional_drift")?;
            forbid(&m.alpha, "model.alpha", "distributional_drift")?;
            forbid(&m.mu_bound, "model.mu_bound", "distributional_drift")?;
            forbid(&m.alpha_bound, "model.alpha_bound", "distributional_drift")?;
            let x_vars = expr::space_vars(1);
            let sigma = m.sigma.as_ref().ok_or("model.sigma: required for this model kind")?;
            check_expr(sigma, &x_vars, "model.sigma")?;
            let sigma_big =
                m.sigma_big.as_ref().ok_or("model.sigma_big: required for this model kind")?;
            check_expr(sigma_big, &x_vars, "model.sigma_big")?;
            finite(require(m.c1, "model.c1")?, "model.c1")?;
            finite(require(m.c_big1, "model.c_big1")?, "model.c_big1")?;
            if m.resolution < 16 {
                return Err("model.resolution: must be at least 16".into());
            }
        }
    }

    // Driver and terminal expressions; d_psi matches the auxiliary system
    // the solver will use (coordinates for diffusions, the scale function
    // for distributional drift).
    let d_psi = if m.kind == ModelKind::DistributionalDrift { 1 } else { m.dim };
    check_expr(&cfg.driver.f, &expr::driver_vars(m.dim, d_psi), "driver.f")?;
    if let Some(eta) = &cfg.driver.eta {
        check_expr(eta, &expr::space_vars(m.dim), "driver.eta")?;
    }
    finite(cfg.driver.k_y, "driver.k_y")?;
    finite(cfg.driver.k_z, "driver.k_z")?;
    finite(cfg.driver.growth, "driver.growth")?;
    check_expr(&cfg.terminal.g, &expr::space_vars(m.dim), "terminal.g")?;
    finite(cfg.terminal.growth, "terminal.growth")?;

    let s = &cfg.solver;
    if s.x.len() != m.dim {
        return Err(format!("solver.x: expected {} coordinates, got {}", m.dim, s.x.len()));
    }
    for (i, &xi) in s.x.iter().enumerate() {
        finite(xi, &format!("solver.x[{i}]"))?;
    }
    finite(s.s, "solver.s")?;
    finite(s.t_end, "solver.t_end")?;
    if !(s.t_end > s.s) {
        return Err(format!(
            "solver.t_end: must exceed solver.s = {}, got {}",
            s.s, s.t_end
        ));
    }
    if s.n_paths == 0 {
        return Err("solver.n_paths: must be positive".into());
    }
    if s.n_steps == 0 {
        return Err("solver.n_steps: must be positive".into());
    }
    if let Some(tol) = s.tol {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(format!("solver.tol: must be positive and finite, got {tol}"));
        }
    }
    if let Some(l) = s.lambda {
        if !(l.is_finite() && l > 0.0) {
            return Err(format!("solver.lambda: must be positive and finite, got {l}"));
        }
    }

    if let Some(v) = &cfg.verification {
        if v.x_axes.len() != m.dim {
            return Err(format!(
                "verification.x_axes: expected {} axes, got {}",
                m.dim,
                v.x_axes.len()
            ));
        }
        if v.n_paths == 0 || v.steps_per_unit == 0 {
            return Err("verification.n_paths / steps_per_unit: must be positive".into());
        }
        if v.check_n_paths == Some(0) {
            return Err("verification.check_n_paths: must be positive".into());
        }
        if v.check_steps_per_unit == Some(0) {
            return Err("verification.check_steps_per_unit: must be positive".into());
        }
        if v.max_sweeps == 0 {
            return Err("verification.max_sweeps: must be positive".into());
        }
        if !(v.sweep_tol.is_finite() && v.sweep_tol > 0.0) {
            return Err(format!(
                "verification.sweep_tol: must be positive and finite, got {}",
                v.sweep_tol
            ));
        }
        for (i, p) in v.test_points.iter().enumerate() {
            if p.len() != 1 + m.dim {
                return Err(format!(
                    "verification.test_points[{i}]: expected [s, x1..x{}], got {} numbers",
                    m.dim,
                    p.len()
                ));
            }
            for (j, &c) in p.iter().enumerate() {
                finite(c, &format!("verification.test_points[{i}][{j}]"))?;
            }
        }
        if let Some(off) = v.u_offset {
            finite(off, "verification.u_offset")?;
        }
        // Grid shape itself (ordering, emptiness) is validated by the node
        // constructor at assembly; map those messages to these keys.
    }

    if cfg.output.formats.is_empty() {
        return Err("output.formats: must name at least one format".into());
    }
    Ok(())
}

/// Core objects compiled out of a validated config.
pub struct Assembled {
    pub dim: usize,
    pub d_psi: usize,
    pub model: ForwardModel,
    pub psi: PsiSystem,
    pub driver: DriverSpec,
    pub terminal: TerminalSpec,
    pub picard: PicardConfig,
}

fn compiled_or_bug(src: &str, vars: &[String], key: &str) -> Compiled {
    let refs: Vec<&str> = vars.iter().map(String::as_str).collect();
    // `validate` already compiled every expression; a failure here is a bug.
    expr::compile(src, &refs).unwrap_or_else(|e| panic!("{key} revalidation failed: {e}"))
}

/// Builds the forward model, auxiliary system, driver, terminal condition
/// and solver settings from a validated config.
pub fn assemble(cfg: &ExperimentConfig) -> CliResult<Assembled> {
    let m = &cfg.model;
    let dim = m.dim;
    let st_vars = expr::spacetime_vars(dim);

    let (model, psi, d_psi) = match m.kind {
        ModelKind::Brownian => {
            let diff = DiffusionModel::brownian(dim)?;
            let psi = PsiSystem::coordinates(&diff);
            (ForwardModel::Diffusion(diff), psi, dim)
        }
        ModelKind::Diffusion => {
            let mu_exprs: Vec<Compiled> = m
                .mu
                .as_ref()
                .unwrap()
                .iter()
                .enumerate()
                .map(|(i, src)| compiled_or_bug(src, &st_vars, &format!("model.mu[{i}]")))
                .collect();
            let alpha_exprs: Vec<Vec<Compiled>> = m
                .alpha
                .as_ref()
                .unwrap()
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(j, src)| {
                            compiled_or_bug(src, &st_vars, &format!("model.alpha[{i}][{j}]"))
                        })
                        .collect()
                })
                .collect();
            let mu: DriftFn = Arc::new(move |t, x: &[f64]| {
                let mut vals = Vec::with_capacity(1 + x.len());
                vals.push(t);
                vals.extend_from_slice(x);
                mu_exprs.iter().map(|c| c.eval(&vals)).collect()
            });
            let alpha: DiffusionMatrixFn = Arc::new(move |t, x: &[f64]| {
                let mut vals = Vec::with_capacity(1 + x.len());
                vals.push(t);
                vals.extend_from_slice(x);
                DMatrix::from_fn(alpha_exprs.len(), alpha_exprs.len(), |i, j| {
                    alpha_exprs[i][j].eval(&vals)
                })
            });
            let diff =
                DiffusionModel::new(dim, mu, alpha, m.mu_bound.unwrap(), m.alpha_bound.unwrap())?;
            let psi = PsiSystem::coordinates(&diff);
            (ForwardModel::Diffusion(diff), psi, dim)
        }
        ModelKind::DistributionalDrift => {
            let x_vars = expr::space_vars(1);
            let sig = compiled_or_bug(m.sigma.as_ref().unwrap(), &x_vars, "model.sigma");
            let sig_big =
                compiled_or_bug(m.sigma_big.as_ref().unwrap(), &x_vars, "model.sigma_big");
            let sigma: ScalarFn = Arc::new(move |x| sig.eval(&[x]));
            let sigma_big: ScalarFn = Arc::new(move |x| sig_big.eval(&[x]));
            let dd = DistributionalDriftModel::build(
                sigma,
                sigma_big,
                cfg.solver.x[0],
                cfg.solver.t_end,
                m.c1.unwrap(),
                m.c_big1.unwrap(),
                m.resolution,
            )?;
            let psi = PsiSystem::scale(&dd);
            (ForwardModel::DistributionalDrift(dd), psi, 1)
        }
    };

    let f_expr = compiled_or_bug(&cfg.driver.f, &expr::driver_vars(dim, d_psi), "driver.f");
    let f: DriverFn = Arc::new(move |t, x: &[f64], y, z: &[f64]| {
        let mut vals = Vec::with_capacity(2 + x.len() + z.len());
        vals.push(t);
        vals.extend_from_slice(x);
        vals.push(y);
        vals.extend_from_slice(z);
        f_expr.eval(&vals)
    });
    let eta: MomentFn = match &cfg.driver.eta {
        Some(src) => {
            let c = compiled_or_bug(src, &expr::space_vars(dim), "driver.eta");
            Arc::new(move |x: &[f64]| c.eval(x))
        }
        None => Arc::new(|_: &[f64]| 1.0),
    };
    let driver = DriverSpec::new(f, cfg.driver.k_y, cfg.driver.k_z, cfg.driver.growth, eta)?;

    let g_expr = compiled_or_bug(&cfg.terminal.g, &expr::space_vars(dim), "terminal.g");
    let g: TerminalFn = Arc::new(move |x: &[f64]| g_expr.eval(x));
    let terminal = TerminalSpec::with_polynomial_growth(g, cfg.terminal.growth, cfg.terminal.power)?;

    let picard = PicardConfig {
        max_iter: cfg.solver.max_iter,
        tol: cfg.solver.tol,
        lambda: cfg.solver.lambda,
        basis: RegressionBasis { degree: cfg.solver.basis_degree, ridge: cfg.solver.ridge },
    };
    picard.validate()?;

    Ok(Assembled { dim, d_psi, model, psi, driver, terminal, picard })
}
