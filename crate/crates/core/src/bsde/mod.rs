//! Backward-equation solver: regression Monte Carlo with Picard iteration.
//!
//! The forward ensemble is fixed once; each Picard sweep regresses the
//! terminal value plus accumulated driver on per-slice polynomial features,
//! extracts the martingale part of the fitted process, and reads the flux
//! `Z` off the realized brackets against the auxiliary martingale system.

pub mod basis;
pub mod io;
pub mod markovian;
pub mod picard;
pub mod types;

pub use basis::{conditional_expectation, RegressionBasis, SliceRegression};
pub use io::{
    read_solution, read_solution_file, write_diagnostics_json_file, write_slice_csv_file,
    write_solution, write_solution_file,
};
pub use markovian::{solve_markovian, solve_markovian_default, MarkovianSolution};
pub use picard::{
    contraction_diagnostics, contraction_lambda, estimate_z, picard_solve,
    psi_martingale_increments, BsdeSolution, MartingaleSliceStat, PicardConfig,
    PicardDiagnostics, PsiIncrements,
};
pub use types::{DriverFn, DriverSpec, MomentFn, TerminalFn, TerminalSpec};
