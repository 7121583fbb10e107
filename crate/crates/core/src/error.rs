use thiserror::Error;

/// Errors shared by every module in this crate.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Invalid user-supplied configuration (grids, counts, tolerances).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A diffusion matrix failed the positive semi-definiteness check.
    #[error("diffusion matrix not positive semi-definite at t={t}, x={x:?} (min eigenvalue {min_eig:.3e})")]
    NonPsd { t: f64, x: Vec<f64>, min_eig: f64 },

    /// A NaN or infinity showed up where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Evaluation outside a tabulated or gridded domain.
    #[error("domain exceeded: {0}")]
    Domain(String),

    /// A query time that is not a node of the ensemble grid.
    #[error("time {t} is not a grid node (no silent interpolation)")]
    NotOnGrid { t: f64 },

    /// Least-squares projection failure, with the observed condition number.
    #[error("regression failed: {msg} (condition number {condition:.3e})")]
    Regression { msg: String, condition: f64 },

    /// Any other numerical failure.
    #[error("{0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
