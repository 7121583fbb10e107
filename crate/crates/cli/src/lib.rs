//! Config-driven experiment runner over the `ppde-core` solvers.
//!
//! The binary (`ppde`) exposes five batch subcommands — `simulate`,
//! `solve-bsde`, `solve-mild`, `verify`, `benchmark` — all driven by one
//! TOML config plus `--config / --seed / --workers / --out` flags. This
//! library target exists so the command layer is unit-testable and reusable
//! from integration tests; there is no interactive surface.

pub mod commands;
pub mod config;
pub mod error;
pub mod expr;
pub mod output;
