//! The five experiment commands.
//!
//! Each command loads core objects out of an assembled config, computes,
//! and emits artifacts through [`RunWriter`] so every file lands atomically
//! and reruns with the same config and seed are byte-identical (timestamps
//! live only in the manifest).

use std::path::PathBuf;

use serde::Serialize;

use ppde_core::bsde::{io as bsde_io, solve_markovian};
use ppde_core::forward::{binfmt, ForwardModel, PathEnsemble};
use ppde_core::mild::{
    build_u_from_bsde_strict, evaluate_mild_residuals, solve_mild_fixed_point, McSettings,
    MildSolutionPair, SpaceTimeNodes,
};
use ppde_core::operators::GridFunction;
use ppde_core::pde::{solve_semilinear_fd, FdConfig};
use ppde_core::TimeGrid;

use crate::config::{
    assemble, Assembled, ExperimentConfig, OutputFormat, VerificationMethod, VerificationSection,
};
use crate::error::{CliError, CliResult};
use crate::output::RunWriter;

/// Seed tag for residual-check paths, so verification draws are independent
/// of the draws that built the node values under the same config seed.
const RESIDUAL_SEED_TAG: u64 = 0x9D43_1B17_52F6_D8A1;
/// Seed tag separating the fixed-point build from the node-by-node build
/// when both run under one config (benchmark).
const FIXED_POINT_SEED_TAG: u64 = 0x6A09_E667_F3BC_C909;

/// Everything a command needs: the validated config plus effective
/// overrides from the command line.
pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub config_path: PathBuf,
}

impl Ctx {
    fn writer(&self, command: &'static str) -> CliResult<RunWriter> {
        RunWriter::new(&self.out_dir, command, &self.config_path, self.seed)
    }

    fn wants(&self, f: OutputFormat) -> bool {
        self.cfg.output.formats.contains(&f)
    }

    fn verification(&self) -> CliResult<&VerificationSection> {
        self.cfg.verification.as_ref().ok_or_else(|| {
            CliError::Usage(
                "verification: section required for solve-mild, verify and benchmark".into(),
            )
        })
    }

    fn nodes(&self) -> CliResult<SpaceTimeNodes> {
        let v = self.verification()?;
        SpaceTimeNodes::new(v.times.clone(), v.x_axes.clone()).map_err(|e| {
            CliError::Usage(format!("verification.times / verification.x_axes: {e}"))
        })
    }
}

fn per_coordinate_stats(ens: &PathEnsemble, step: usize) -> (Vec<f64>, Vec<f64>) {
    let d = ens.dim();
    let n = ens.n_paths();
    let mut mean = vec![0.0; d];
    for p in 0..n {
        for (m, &s) in mean.iter_mut().zip(ens.state(p, step)) {
            *m += s;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; d];
    for p in 0..n {
        for ((v, &m), &s) in var.iter_mut().zip(&mean).zip(ens.state(p, step)) {
            *v += (s - m) * (s - m);
        }
    }
    let denom = (n.max(2) - 1) as f64;
    let sd = var.iter().map(|v| (v / denom).sqrt()).collect();
    (mean, sd)
}

#[derive(Serialize)]
struct SimulateSummary {
    n_paths: usize,
    dim: usize,
    t0: f64,
    t_end: f64,
    n_steps: usize,
    final_slice_mean: Vec<f64>,
    final_slice_sd: Vec<f64>,
}

/// Simulates the forward model from the configured start point and writes
/// the ensemble in the binary interchange format.
pub fn cmd_simulate(ctx: &Ctx) -> CliResult<()> {
    let a = assemble(&ctx.cfg)?;
    let s = &ctx.cfg.solver;
    let grid = TimeGrid::uniform(s.s, s.t_end, s.n_steps)?;
    let ens = a.model.simulate(s.s, &s.x, &grid, s.n_paths, ctx.seed)?;

    let mut w = ctx.writer("simulate")?;
    let mut bytes = Vec::new();
    binfmt::write_ensemble(&ens, &mut bytes)?;
    w.emit("ensemble.bin", &bytes)?;

    if ctx.wants(OutputFormat::Csv) {
        let mut csv_w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["k".to_string(), "t".to_string()];
        header.extend((1..=ens.dim()).map(|i| format!("mean_{i}")));
        header.extend((1..=ens.dim()).map(|i| format!("sd_{i}")));
        csv_w.write_record(&header).map_err(|e| CliError::Runtime(e.to_string()))?;
        for k in 0..=grid.n_steps() {
            let (mean, sd) = per_coordinate_stats(&ens, k);
            let mut row = vec![format!("{k}"), format!("{}", grid.time(k))];
            row.extend(mean.iter().map(|v| format!("{v}")));
            row.extend(sd.iter().map(|v| format!("{v}")));
            csv_w.write_record(&row).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        let bytes = csv_w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
        w.emit("ensemble_slices.csv", &bytes)?;
    }

    if ctx.wants(OutputFormat::Json) {
        let (mean, sd) = per_coordinate_stats(&ens, grid.n_steps());
        w.emit_json(
            "simulate_summary.json",
            &SimulateSummary {
                n_paths: ens.n_paths(),
                dim: ens.dim(),
                t0: grid.t0(),
                t_end: grid.t_end(),
                n_steps: grid.n_steps(),
                final_slice_mean: mean,
                final_slice_sd: sd,
            },
        )?;
    }
    println!("simulate: {} paths over {} steps -> {}", ens.n_paths(), grid.n_steps(), w.dir().display());
    w.finish()
}

#[derive(Serialize)]
struct BsdeSummary {
    u: f64,
    u_se: f64,
    z: Vec<f64>,
    z_se: Vec<f64>,
    converged: bool,
    iterations: usize,
    lambda: f64,
    distances: Vec<f64>,
    ratios: Vec<f64>,
}

/// Runs the backward solver from the configured start point; writes the
/// solution in the binary format plus JSON diagnostics.
pub fn cmd_solve_bsde(ctx: &Ctx) -> CliResult<()> {
    let a = assemble(&ctx.cfg)?;
    let s = &ctx.cfg.solver;
    let grid = TimeGrid::uniform(s.s, s.t_end, s.n_steps)?;
    let sol = solve_markovian(
        &a.model,
        Some(&a.psi),
        &a.driver,
        &a.terminal,
        s.s,
        &s.x,
        &grid,
        s.n_paths,
        ctx.seed,
        &a.picard,
    )?;

    let mut w = ctx.writer("solve-bsde")?;
    let mut bytes = Vec::new();
    bsde_io::write_solution(&sol.solution, &mut bytes)?;
    w.emit("solution.bin", &bytes)?;

    if ctx.wants(OutputFormat::Json) {
        w.emit_json(
            "bsde_summary.json",
            &BsdeSummary {
                u: sol.u,
                u_se: sol.u_se,
                z: sol.z_at_start.clone(),
                z_se: sol.z_at_start_se.clone(),
                converged: sol.solution.converged,
                iterations: sol.solution.iterations,
                lambda: sol.solution.lambda,
                distances: sol.solution.distances.clone(),
                ratios: sol.solution.ratios.clone(),
            },
        )?;
    }
    if ctx.wants(OutputFormat::Csv) {
        let mut bytes = Vec::new();
        sol.solution.write_slice_csv(&mut bytes)?;
        w.emit("slices.csv", &bytes)?;
    }
    println!(
        "solve-bsde: u = {:.6} +- {:.6} ({} iterations, converged = {})",
        sol.u, sol.u_se, sol.solution.iterations, sol.solution.converged
    );
    w.finish()
}

#[derive(Serialize)]
struct MildSummary {
    method: &'static str,
    n_times: usize,
    axis_sizes: Vec<usize>,
    converged: Option<bool>,
    sweeps: Option<usize>,
    sup_changes: Option<Vec<f64>>,
}

fn build_pair(ctx: &Ctx, a: &Assembled, nodes: &SpaceTimeNodes) -> CliResult<(MildSolutionPair, MildSummary)> {
    let v = ctx.verification()?;
    let mc = McSettings { n_paths: v.n_paths, steps_per_unit: v.steps_per_unit, seed: ctx.seed };
    let axis_sizes = nodes.axes().iter().map(Vec::len).collect();
    match v.method {
        VerificationMethod::FromBsde => {
            let pair = build_u_from_bsde_strict(
                &a.model, Some(&a.psi), &a.driver, &a.terminal, nodes, &mc, &a.picard,
            )?;
            let summary = MildSummary {
                method: "from_bsde",
                n_times: nodes.times().len(),
                axis_sizes,
                converged: None,
                sweeps: None,
                sup_changes: None,
            };
            Ok((pair, summary))
        }
        VerificationMethod::FixedPoint => {
            let mc = McSettings { seed: ctx.seed ^ FIXED_POINT_SEED_TAG, ..mc };
            let out = solve_mild_fixed_point(
                &a.model, &a.psi, &a.driver, &a.terminal, nodes, &mc, v.max_sweeps, v.sweep_tol,
            )?;
            let summary = MildSummary {
                method: "fixed_point",
                n_times: nodes.times().len(),
                axis_sizes,
                converged: Some(out.converged),
                sweeps: Some(out.sweeps),
                sup_changes: Some(out.sup_changes.clone()),
            };
            Ok((out.pair, summary))
        }
    }
}

/// Builds the value/flux pair on the verification grid and writes it as CSV.
pub fn cmd_solve_mild(ctx: &Ctx) -> CliResult<()> {
    let a = assemble(&ctx.cfg)?;
    let nodes = ctx.nodes()?;
    let (pair, summary) = build_pair(ctx, &a, &nodes)?;

    let mut w = ctx.writer("solve-mild")?;
    let mut bytes = Vec::new();
    pair.write_csv(&mut bytes)?;
    w.emit("pair.csv", &bytes)?;
    if ctx.wants(OutputFormat::Json) {
        w.emit_json("mild_summary.json", &summary)?;
    }
    match (summary.converged, summary.sweeps) {
        (Some(c), Some(n)) => {
            println!("solve-mild: fixed point over {} nodes, {} sweeps, converged = {c}",
                nodes.times().len() * nodes.axes().iter().map(Vec::len).product::<usize>(), n);
        }
        _ => println!(
            "solve-mild: node-by-node build over {} nodes",
            nodes.times().len() * nodes.axes().iter().map(Vec::len).product::<usize>()
        ),
    }
    w.finish()
}

fn offset_pair(pair: MildSolutionPair, offset: f64) -> CliResult<MildSolutionPair> {
    let u = &pair.u;
    let shifted: Vec<f64> = u.values().iter().map(|v| v + offset).collect();
    let u = GridFunction::new(u.times().to_vec(), u.axes().to_vec(), shifted)?;
    Ok(MildSolutionPair::new(pair.provenance, u, pair.v)?)
}

/// Builds the pair, then checks the kernel-integral residuals at the
/// configured test points. Returns whether every line passed.
pub fn cmd_verify(ctx: &Ctx) -> CliResult<bool> {
    let a = assemble(&ctx.cfg)?;
    let v = ctx.verification()?;
    if v.test_points.is_empty() {
        return Err(CliError::Usage(
            "verification.test_points: verify needs at least one test point".into(),
        ));
    }
    let points: Vec<(f64, Vec<f64>)> =
        v.test_points.iter().map(|row| (row[0], row[1..].to_vec())).collect();
    let nodes = ctx.nodes()?;
    let (pair, summary) = build_pair(ctx, &a, &nodes)?;
    let pair = match v.u_offset {
        Some(off) if off != 0.0 => offset_pair(pair, off)?,
        _ => pair,
    };

    let mc = McSettings {
        n_paths: v.check_n_paths.unwrap_or(v.n_paths),
        steps_per_unit: v.check_steps_per_unit.unwrap_or(v.steps_per_unit),
        seed: ctx.seed ^ RESIDUAL_SEED_TAG,
    };
    let report = evaluate_mild_residuals(&pair, &a.model, &a.psi, &a.driver, &a.terminal, &points, &mc)?;

    let mut w = ctx.writer("verify")?;
    let mut bytes = Vec::new();
    report.write_json(&mut bytes)?;
    w.emit("residuals.json", &bytes)?;
    if ctx.wants(OutputFormat::Csv) {
        let mut bytes = Vec::new();
        report.write_plot_csv(&mut bytes)?;
        w.emit("residuals.csv", &bytes)?;
    }
    if ctx.wants(OutputFormat::Json) {
        w.emit_json("mild_summary.json", &summary)?;
    }
    for p in &report.points {
        let worst = p
            .residuals
            .iter()
            .zip(&p.std_errors)
            .map(|(r, se)| if *se > 0.0 { r.abs() / (3.0 * se) } else { 0.0 })
            .fold(0.0f64, f64::max);
        println!(
            "verify: s = {:.4}, x = {:?}: {} (worst |residual| / 3SE = {:.3})",
            p.s,
            p.x,
            if p.pass.iter().all(|&b| b) { "pass" } else { "FAIL" },
            worst
        );
    }
    println!("verify: all_pass = {}", report.all_pass);
    w.finish()?;
    Ok(report.all_pass)
}

#[derive(Serialize)]
struct BenchmarkSummary {
    n_nodes: usize,
    max_abs_bsde_fd: f64,
    max_abs_fp_fd: f64,
    fd_x_lo: f64,
    fd_x_hi: f64,
    fd_n_space: usize,
    fd_n_time: usize,
    fd_boundary_mass: f64,
    fd_boundary_warning: bool,
}

/// Compares the node-by-node build and the fixed-point build against the
/// finite-difference oracle at the verification nodes (one-dimensional
/// diffusions only) and writes the comparison table.
pub fn cmd_benchmark(ctx: &Ctx) -> CliResult<()> {
    let a = assemble(&ctx.cfg)?;
    let diffusion = match &a.model {
        ForwardModel::Diffusion(d) if d.dim == 1 => d,
        ForwardModel::Diffusion(_) => {
            return Err(CliError::Usage(
                "benchmark: the finite-difference oracle is one-dimensional; model.dim must be 1"
                    .into(),
            ))
        }
        ForwardModel::DistributionalDrift(_) => {
            return Err(CliError::Usage(
                "benchmark: the finite-difference oracle needs pointwise coefficients; \
                 distributional_drift is only handled by the probabilistic solvers"
                    .into(),
            ))
        }
    };
    let v = ctx.verification()?;
    let nodes = ctx.nodes()?;
    let times = nodes.times().to_vec();
    let axis = nodes.axes()[0].clone();
    let (t0, t_end) = (times[0], *times.last().unwrap());

    // Oracle grid: wide enough that boundary truncation stays benign, fine
    // enough for the quality floor.
    let pad = (4.0 * (diffusion.alpha_bound * (t_end - t0)).sqrt()).max(1.0);
    let n_space = 801;
    let n_time = ((400.0 * (t_end - t0)).ceil() as usize).max(n_space / 4 + 1);
    let fd_cfg = FdConfig {
        x_lo: axis[0] - pad,
        x_hi: axis[axis.len() - 1] + pad,
        n_space,
        n_time,
        t0,
        t_end,
        ..FdConfig::default()
    };
    let fd = solve_semilinear_fd(diffusion, &a.driver, &a.terminal, &fd_cfg)?;

    let mc = McSettings { n_paths: v.n_paths, steps_per_unit: v.steps_per_unit, seed: ctx.seed };
    let bsde_pair = build_u_from_bsde_strict(
        &a.model, Some(&a.psi), &a.driver, &a.terminal, &nodes, &mc, &a.picard,
    )?;
    let fp_mc = McSettings { seed: ctx.seed ^ FIXED_POINT_SEED_TAG, ..mc };
    let fp = solve_mild_fixed_point(
        &a.model, &a.psi, &a.driver, &a.terminal, &nodes, &fp_mc, v.max_sweeps, v.sweep_tol,
    )?;

    let mut csv_w = csv::Writer::from_writer(Vec::new());
    csv_w
        .write_record(["s", "x", "u_bsde", "u_fixed_point", "u_fd", "dev_bsde_fd", "dev_fp_fd"])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut max_bsde = 0.0f64;
    let mut max_fp = 0.0f64;
    for &s in &times {
        for &x in &axis {
            let ub = bsde_pair.u.eval(s, &[x])?;
            let uf = fp.pair.u.eval(s, &[x])?;
            let uo = fd.u.eval(s, &[x])?;
            max_bsde = max_bsde.max((ub - uo).abs());
            max_fp = max_fp.max((uf - uo).abs());
            csv_w
                .write_record([
                    format!("{s}"),
                    format!("{x}"),
                    format!("{ub}"),
                    format!("{uf}"),
                    format!("{uo}"),
                    format!("{}", (ub - uo).abs()),
                    format!("{}", (uf - uo).abs()),
                ])
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    let table = csv_w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut w = ctx.writer("benchmark")?;
    w.emit("benchmark.csv", &table)?;
    if ctx.wants(OutputFormat::Json) {
        w.emit_json(
            "benchmark_summary.json",
            &BenchmarkSummary {
                n_nodes: times.len() * axis.len(),
                max_abs_bsde_fd: max_bsde,
                max_abs_fp_fd: max_fp,
                fd_x_lo: fd_cfg.x_lo,
                fd_x_hi: fd_cfg.x_hi,
                fd_n_space: n_space,
                fd_n_time: n_time,
                fd_boundary_mass: fd.boundary_mass,
                fd_boundary_warning: fd.boundary_warning,
            },
        )?;
    }
    println!(
        "benchmark: {} nodes, max |u_bsde - u_fd| = {max_bsde:.5}, max |u_fp - u_fd| = {max_fp:.5}",
        times.len() * axis.len()
    );
    w.finish()
}
