use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ppde_cli::commands::{self, Ctx};
use ppde_cli::config;
use ppde_cli::error::CliError;

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for path simulation (default: one per CPU). Results
    /// do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (default: the config's output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(
    name = "ppde",
    version,
    about = "Batch experiment runner: Monte-Carlo backward solvers with kernel-integral verification"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Simulate the forward model and write the path ensemble.
    Simulate(Common),
    /// Run the backward solver from the configured start point.
    SolveBsde(Common),
    /// Build the value/flux pair on the verification grid.
    SolveMild(Common),
    /// Build the pair and check the kernel-integral residuals (exit 0 iff
    /// every line passes).
    Verify(Common),
    /// Compare both constructions against the finite-difference oracle.
    Benchmark(Common),
}

impl Cmd {
    fn common(&self) -> &Common {
        match self {
            Cmd::Simulate(c)
            | Cmd::SolveBsde(c)
            | Cmd::SolveMild(c)
            | Cmd::Verify(c)
            | Cmd::Benchmark(c) => c,
        }
    }
}

fn run(cmd: &Cmd) -> Result<bool, CliError> {
    let common = cmd.common();
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        // First caller wins; a later conflicting call only matters in tests
        // that share a process, where the default pool is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = config::load_config(&common.config)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let out_dir = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let ctx = Ctx { cfg, seed, out_dir, config_path: common.config.clone() };
    match cmd {
        Cmd::Simulate(_) => commands::cmd_simulate(&ctx).map(|()| true),
        Cmd::SolveBsde(_) => commands::cmd_solve_bsde(&ctx).map(|()| true),
        Cmd::SolveMild(_) => commands::cmd_solve_mild(&ctx).map(|()| true),
        Cmd::Verify(_) => commands::cmd_verify(&ctx),
        Cmd::Benchmark(_) => commands::cmd_benchmark(&ctx).map(|()| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
