//! Test functions, generators, square-field operators, and the empirical
//! martingale checks built on them.

pub mod generator;
pub mod grid_function;
pub mod martingale;
pub mod psi;
pub mod test_function;

pub use generator::{alpha_grad, apply_a, carre_du_champ, carre_du_champ_direct, gamma_psi, OpFn, VecOpFn};
pub use grid_function::GridFunction;
pub use martingale::{
    bracket_identity_check, martingale_residual_check, BracketComponent, BracketReport,
    MartingaleReport, SliceStat,
};
pub use psi::PsiSystem;
pub use test_function::{Growth, SpaceTimeFn, SpaceTimeMatFn, SpaceTimeVecFn, TestFunction};
