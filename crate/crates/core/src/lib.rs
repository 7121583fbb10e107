//! Numerical kernels for Markovian backward stochastic differential equations
//! (BSDEs) and their pseudo-PDE counterparts.
//!
//! The library is organised around one pipeline:
//!
//! 1. [`forward`] simulates the forward Markov process `X` started from any
//!    `(s, x)` and estimates transition-kernel functionals `P_{s,t}[phi](x)`
//!    by Monte Carlo. Diffusions are handled directly; one-dimensional models
//!    whose drift only exists as a distribution are simulated through their
//!    scale function `h` (`h(X)` is a driftless diffusion).
//! 2. [`operators`] applies the generator `a`, the carre du champ `Gamma` and
//!    the psi-generalized gradient `Gamma^psi` to test functions, and checks
//!    the martingale problem empirically along simulated paths.
//! 3. [`bsde`] solves `Y_t = g(X_T) + int_t^T f(r, X_r, Y_r, Z_r) dV_r - (M_T - M_t)`
//!    by Picard iteration with regression-estimated conditional expectations,
//!    and identifies `Z = d<M, M[psi]>/dV` from cross increments.
//! 4. [`mild`] assembles `u(s,x) = Y^{s,x}_s` and `v` on a space-time grid,
//!    either from per-node BSDE solves or by a kernel fixed-point sweep, and
//!    verifies the decoupled mild system residuals by Monte Carlo.
//! 5. [`pde`] is the deterministic oracle: a theta-scheme finite-difference
//!    solver for the semilinear parabolic PDE in one space dimension, plus
//!    closed-form Gaussian solutions.
//!
//! Everything is deterministic given `(inputs, seed)`: path randomness comes
//! from counter-based per-path streams, so results do not depend on how work
//! is scheduled across threads.

pub mod bsde;
pub mod error;
pub mod forward;
pub mod grid;
pub mod mild;
pub mod operators;
pub mod pde;
pub mod rng;

pub use error::{CoreError, Result};
pub use grid::TimeGrid;
