//! Analytic solutions used as oracles in tests and benchmarks.

use std::str::FromStr;
use std::sync::Arc;

use crate::error::{CoreError, Result};

/// Evaluable space-time function `(s, x) -> value`.
pub type ClosedFormFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// The closed forms on offer.
///
/// * `Moment2` — `u(s, x) = x² + α(T − s)`, the second moment of a centered
///   Gaussian spread added to the square of the start point. Solves the heat
///   equation with terminal condition `x²` and zero driver.
/// * `EigenSin` — `u(s, x) = e^{−α(T−s)/2} sin x`, the decaying eigenfunction
///   of the half-Laplacian with terminal condition `sin x`.
/// * `Discounted` — `e^{−r(T−s)}` times a base closed form; solves the same
///   equation with the driver `f = −r·y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosedFormKind {
    Moment2,
    EigenSin,
    Discounted,
}

impl FromStr for ClosedFormKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moment2" => Ok(Self::Moment2),
            "eigen_sin" => Ok(Self::EigenSin),
            "discounted" => Ok(Self::Discounted),
            other => Err(CoreError::Config(format!(
                "unknown closed form kind {other:?}; expected moment2, eigen_sin or discounted"
            ))),
        }
    }
}

/// Parameters for [`closed_form_gaussian`]. `rate` and `base` are only
/// consulted by the `Discounted` kind.
#[derive(Clone)]
pub struct ClosedFormSpec {
    pub kind: ClosedFormKind,
    pub alpha: f64,
    pub t_end: f64,
    pub rate: f64,
    pub base: Option<Box<ClosedFormSpec>>,
}

impl ClosedFormSpec {
    pub fn new(kind: ClosedFormKind, alpha: f64, t_end: f64) -> Self {
        Self { kind, alpha, t_end, rate: 0.0, base: None }
    }

    pub fn discounted(rate: f64, base: ClosedFormSpec) -> Self {
        Self {
            kind: ClosedFormKind::Discounted,
            alpha: base.alpha,
            t_end: base.t_end,
            rate,
            base: Some(Box::new(base)),
        }
    }
}

/// Builds the requested closed form as an evaluable function.
pub fn closed_form_gaussian(spec: &ClosedFormSpec) -> Result<ClosedFormFn> {
    if !(spec.alpha.is_finite() && spec.alpha > 0.0) {
        return Err(CoreError::Config(format!(
            "closed form needs a positive diffusion coefficient, got {}",
            spec.alpha
        )));
    }
    if !spec.t_end.is_finite() {
        return Err(CoreError::Config(format!(
            "closed form needs a finite terminal time, got {}",
            spec.t_end
        )));
    }
    let (alpha, t_end) = (spec.alpha, spec.t_end);
    match spec.kind {
        ClosedFormKind::Moment2 => {
            Ok(Arc::new(move |s, x: &[f64]| x[0] * x[0] + alpha * (t_end - s)))
        }
        ClosedFormKind::EigenSin => {
            Ok(Arc::new(move |s, x: &[f64]| (-alpha * (t_end - s) / 2.0).exp() * x[0].sin()))
        }
        ClosedFormKind::Discounted => {
            if !spec.rate.is_finite() {
                return Err(CoreError::Config(format!(
                    "discount rate must be finite, got {}",
                    spec.rate
                )));
            }
            let base = spec.base.as_deref().ok_or_else(|| {
                CoreError::Config("discounted closed form needs a base form".into())
            })?;
            let rate = spec.rate;
            let inner = closed_form_gaussian(base)?;
            Ok(Arc::new(move |s, x: &[f64]| (-rate * (t_end - s)).exp() * inner(s, x)))
        }
    }
}
