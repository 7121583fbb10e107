//! Deterministic one-dimensional references: a semilinear finite-difference
//! solver and analytic closed forms, used as oracles by tests and the
//! benchmark command.

pub mod closed_form;
pub mod fd;

pub use closed_form::{closed_form_gaussian, ClosedFormFn, ClosedFormKind, ClosedFormSpec};
pub use fd::{solve_semilinear_fd, BoundaryKind, FdConfig, FdSolution};
