//! Least-squares Monte-Carlo conditional expectations: per-slice ridge
//! regression on standardized tensor-polynomial features.
//!
//! The intercept is handled by centering (never penalized): slopes are fit
//! to the centered payoff on centered-and-scaled features, and the fitted
//! values add the payoff mean back. Columns with no variation on a slice
//! (the start slice, frozen coordinates) are dropped, which turns the
//! degenerate start-slice regression into a plain Monte-Carlo mean.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{CoreError, Result};
use crate::forward::PathEnsemble;

/// Feature-map settings: tensor polynomials of total degree `degree`,
/// ridge penalty on the (standardized) slope coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionBasis {
    pub degree: u32,
    pub ridge: f64,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        Self { degree: 4, ridge: 1e-8 }
    }
}

impl RegressionBasis {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(CoreError::Config(format!(
                "ridge parameter must be finite and nonnegative, got {}",
                self.ridge
            )));
        }
        Ok(())
    }
}

/// All nonzero multi-indices of total degree <= `degree` in `dim` variables,
/// in graded lexicographic order; the zero index (intercept) is excluded
/// because centering handles it.
pub(crate) fn slope_multi_indices(dim: usize, degree: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut current = vec![0u32; dim];
    for total in 1..=degree {
        fill_indices(dim, 0, total, &mut current, &mut out);
    }
    out
}

fn fill_indices(
    dim: usize,
    pos: usize,
    remaining: u32,
    current: &mut Vec<u32>,
    out: &mut Vec<Vec<u32>>,
) {
    if pos == dim - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for p in (0..=remaining).rev() {
        current[pos] = p;
        fill_indices(dim, pos + 1, remaining - p, current, out);
        current[pos] = 0;
    }
}

fn eval_feature(x: &[f64], powers: &[u32]) -> f64 {
    let mut v = 1.0;
    for (xi, p) in x.iter().zip(powers.iter()) {
        v *= xi.powi(*p as i32);
    }
    v
}

/// Fitted regression context for one time slice: standardized features and
/// the Cholesky factor of the penalized normal matrix, reusable across many
/// payoffs on the same slice.
pub struct SliceRegression {
    /// Standardized feature matrix, kept columns only (n x m).
    feats: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    n_paths: usize,
    n_kept: usize,
    /// Ratio of largest to smallest eigenvalue of the penalized normal
    /// matrix, estimated from the Cholesky diagonal.
    pub condition: f64,
}

impl SliceRegression {
    /// Builds features from the ensemble states at `t_index`.
    pub fn fit(ensemble: &PathEnsemble, t_index: usize, basis: &RegressionBasis) -> Result<Self> {
        basis.validate()?;
        let n = ensemble.n_paths();
        let dim = ensemble.dim();
        if t_index > ensemble.grid().n_steps() {
            return Err(CoreError::Config(format!(
                "slice index {t_index} beyond the grid ({} steps)",
                ensemble.grid().n_steps()
            )));
        }
        let indices = slope_multi_indices(dim, basis.degree);
        let m_total = indices.len() + 1;
        if m_total * 10 > n {
            return Err(CoreError::Config(format!(
                "basis of {m_total} features needs at least {} paths, got {n}",
                m_total * 10
            )));
        }

        // Raw features, then per-column standardization with degenerate drop.
        let mut raw = DMatrix::zeros(n, indices.len());
        for p in 0..n {
            let x = ensemble.state(p, t_index);
            for (j, powers) in indices.iter().enumerate() {
                let f = eval_feature(x, powers);
                if !f.is_finite() {
                    return Err(CoreError::NonFinite(format!(
                        "feature {powers:?} at slice {t_index}, path {p}"
                    )));
                }
                raw[(p, j)] = f;
            }
        }
        let mut kept_cols: Vec<(usize, f64, f64)> = Vec::new();
        for j in 0..indices.len() {
            let col = raw.column(j);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
            let sd = var.sqrt();
            if sd > 1e-12 * (1.0 + mean.abs()) {
                kept_cols.push((j, mean, sd));
            }
        }
        let m = kept_cols.len();
        let mut feats = DMatrix::zeros(n, m);
        for (k, &(j, mean, sd)) in kept_cols.iter().enumerate() {
            for p in 0..n {
                feats[(p, k)] = (raw[(p, j)] - mean) / sd;
            }
        }

        if m == 0 {
            return Ok(Self { feats, chol: None, n_paths: n, n_kept: 0, condition: 1.0 });
        }
        let mut normal = feats.transpose() * &feats;
        for k in 0..m {
            normal[(k, k)] += basis.ridge;
        }
        let chol = match Cholesky::new(normal.clone()) {
            Some(c) => c,
            None => {
                let eigs = normal.symmetric_eigen().eigenvalues;
                let max = eigs.iter().cloned().fold(f64::MIN, f64::max);
                let min = eigs.iter().cloned().fold(f64::MAX, f64::min);
                return Err(CoreError::Regression {
                    msg: format!(
                        "normal matrix not positive definite after ridge at slice {t_index}"
                    ),
                    condition: (max / min).abs(),
                });
            }
        };
        let diag = chol.l_dirty();
        let mut dmax = f64::MIN;
        let mut dmin = f64::MAX;
        for k in 0..m {
            let d = diag[(k, k)];
            dmax = dmax.max(d);
            dmin = dmin.min(d);
        }
        let condition = (dmax / dmin) * (dmax / dmin);
        Ok(Self { feats, chol: Some(chol), n_paths: n, n_kept: m, condition })
    }

    /// Number of active features including the intercept.
    pub fn n_features(&self) -> usize {
        self.n_kept + 1
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// Ridge projection of the payoff onto the slice features; returns the
    /// fitted value for every path.
    pub fn project(&self, payoff: &[f64]) -> Result<Vec<f64>> {
        if payoff.len() != self.n_paths {
            return Err(CoreError::Config(format!(
                "payoff has {} entries for {} paths",
                payoff.len(),
                self.n_paths
            )));
        }
        for (p, v) in payoff.iter().enumerate() {
            if !v.is_finite() {
                return Err(CoreError::NonFinite(format!("payoff at path {p}")));
            }
        }
        let n = self.n_paths as f64;
        let mean = payoff.iter().sum::<f64>() / n;
        if self.n_kept == 0 {
            return Ok(vec![mean; self.n_paths]);
        }
        let centered = DVector::from_iterator(self.n_paths, payoff.iter().map(|v| v - mean));
        let rhs = self.feats.transpose() * centered;
        let beta = self
            .chol
            .as_ref()
            .expect("kept columns imply a factorization")
            .solve(&rhs);
        let fitted = &self.feats * beta;
        let mut out = Vec::with_capacity(self.n_paths);
        for p in 0..self.n_paths {
            let v = mean + fitted[p];
            if !v.is_finite() {
                return Err(CoreError::Numerical(format!(
                    "regression produced a non-finite fitted value at path {p}"
                )));
            }
            out.push(v);
        }
        Ok(out)
    }

    /// Residual-based estimate of the standard error of the fitted values:
    /// `rms(residual) * sqrt(n_features / n_paths)`.
    pub fn fitted_se(&self, payoff: &[f64], fitted: &[f64]) -> f64 {
        let n = self.n_paths as f64;
        let ss: f64 = payoff.iter().zip(fitted).map(|(y, f)| (y - f) * (y - f)).sum();
        (ss / n).sqrt() * ((self.n_features() as f64) / n).sqrt()
    }
}

/// One-shot conditional expectation `E[payoff | X_t]` at a slice,
/// estimated by ridge regression on the basis features of `X_t`.
pub fn conditional_expectation(
    ensemble: &PathEnsemble,
    payoff: &[f64],
    t_index: usize,
    basis: &RegressionBasis,
) -> Result<Vec<f64>> {
    SliceRegression::fit(ensemble, t_index, basis)?.project(payoff)
}
