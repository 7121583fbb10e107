//! Families of auxiliary functions whose compensated images span the
//! martingale increments used for the Z component.
//!
//! A system records, for each component `psi_i`, the function itself, its
//! generator image `a(psi_i)`, the diagonal square field `G(psi_i, psi_i)`,
//! and an upper bound on the density of that square field with respect to
//! the clock. The two stock systems are the coordinate system (for
//! diffusions) and the single scale function of a transformed
//! distributional-drift model (whose generator image vanishes identically).

use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::forward::{DiffusionModel, DistributionalDriftModel};
use crate::operators::test_function::{Growth, SpaceTimeFn, TestFunction};

#[derive(Clone)]
pub struct PsiSystem {
    psi: Vec<TestFunction>,
    a_psi: Vec<SpaceTimeFn>,
    gamma_diag: Vec<SpaceTimeFn>,
    gamma_diag_bounds: Vec<f64>,
}

impl PsiSystem {
    /// Builds a system from explicit parts. `gamma_diag_bounds[i]` must
    /// dominate `gamma_diag[i]` everywhere the system will be evaluated.
    pub fn from_parts(
        psi: Vec<TestFunction>,
        a_psi: Vec<SpaceTimeFn>,
        gamma_diag: Vec<SpaceTimeFn>,
        gamma_diag_bounds: Vec<f64>,
    ) -> Result<Self> {
        let n = psi.len();
        if n == 0 {
            return Err(CoreError::Config("psi system must have at least one component".into()));
        }
        if a_psi.len() != n || gamma_diag.len() != n || gamma_diag_bounds.len() != n {
            return Err(CoreError::Config(format!(
                "psi system parts disagree in length: {} functions, {} generator images, \
                 {} square fields, {} bounds",
                n,
                a_psi.len(),
                gamma_diag.len(),
                gamma_diag_bounds.len()
            )));
        }
        for (i, b) in gamma_diag_bounds.iter().enumerate() {
            if !(b.is_finite() && *b >= 0.0) {
                return Err(CoreError::Config(format!(
                    "square-field bound for component {i} must be finite and nonnegative, got {b}"
                )));
            }
        }
        Ok(Self { psi, a_psi, gamma_diag, gamma_diag_bounds })
    }

    /// Coordinate system `psi_i(x) = x_i` for a diffusion: the generator
    /// images are the drift components and the diagonal square fields are
    /// the diagonal diffusion entries.
    pub fn coordinates(model: &DiffusionModel) -> Self {
        let d = model.dim;
        let mut psi = Vec::with_capacity(d);
        let mut a_psi: Vec<SpaceTimeFn> = Vec::with_capacity(d);
        let mut gamma_diag: Vec<SpaceTimeFn> = Vec::with_capacity(d);
        for i in 0..d {
            psi.push(TestFunction::coordinate(d, i));
            let m = model.clone();
            a_psi.push(Arc::new(move |t, x: &[f64]| m.mu(t, x)[i]));
            let m = model.clone();
            gamma_diag.push(Arc::new(move |t, x: &[f64]| m.alpha(t, x)[(i, i)]));
        }
        let bound = model.alpha_bound;
        Self {
            psi,
            a_psi,
            gamma_diag,
            gamma_diag_bounds: vec![bound; d],
        }
    }

    /// Single-component system `psi = h` for a transformed
    /// distributional-drift model. `h(X)` is a martingale, so the recorded
    /// generator image is identically zero; the square field is
    /// `(sigma * h')^2` composed with the state, bounded by the declared
    /// upper coefficient bound squared.
    pub fn scale(model: &DistributionalDriftModel) -> Self {
        let model = model.clone();
        let value: SpaceTimeFn = {
            let m = model.clone();
            Arc::new(move |_t: f64, x: &[f64]| {
                let clamped = x[0].clamp(m.h.x_min(), m.h.x_max());
                m.h.eval(clamped).expect("clamped point is inside the tabulated domain")
            })
        };
        let psi = TestFunction::new(1, value, Growth::Bounded);
        let a_psi: SpaceTimeFn = Arc::new(|_, _| 0.0);
        let gamma: SpaceTimeFn = {
            let m = model.clone();
            Arc::new(move |_t: f64, x: &[f64]| {
                let sh = m.sigma(x[0]) * m.h_prime(x[0]);
                sh * sh
            })
        };
        let c_big = model.c_big1;
        Self {
            psi: vec![psi],
            a_psi: vec![a_psi],
            gamma_diag: vec![gamma],
            gamma_diag_bounds: vec![c_big * c_big],
        }
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    pub fn psi(&self, i: usize) -> &TestFunction {
        &self.psi[i]
    }

    pub fn components(&self) -> &[TestFunction] {
        &self.psi
    }

    /// Recorded generator image of component `i`.
    pub fn a_psi(&self, i: usize, t: f64, x: &[f64]) -> f64 {
        (self.a_psi[i])(t, x)
    }

    /// Recorded diagonal square field of component `i`.
    pub fn gamma_diag(&self, i: usize, t: f64, x: &[f64]) -> f64 {
        (self.gamma_diag[i])(t, x)
    }

    /// Recorded upper bound on the diagonal square field of component `i`.
    pub fn gamma_diag_bound(&self, i: usize) -> f64 {
        self.gamma_diag_bounds[i]
    }

    /// Largest recorded square-field bound across components; this is the
    /// constant that enters the weighted-norm rate.
    pub fn max_gamma_diag_bound(&self) -> f64 {
        self.gamma_diag_bounds.iter().cloned().fold(0.0, f64::max)
    }

    /// Spot-checks that every recorded square field stays within its bound
    /// at the supplied points.
    pub fn audit_bounds<'a>(
        &self,
        points: impl IntoIterator<Item = (f64, &'a [f64])>,
    ) -> Result<()> {
        for (t, x) in points {
            for i in 0..self.len() {
                let g = self.gamma_diag(i, t, x);
                if !g.is_finite() {
                    return Err(CoreError::NonFinite(format!(
                        "square field of component {i} at (t={t}, x={x:?})"
                    )));
                }
                let b = self.gamma_diag_bounds[i];
                if g.abs() > b * (1.0 + 1e-12) {
                    return Err(CoreError::Config(format!(
                        "square field of component {i} exceeds its recorded bound at \
                         (t={t}, x={x:?}): |{g}| > {b}"
                    )));
                }
            }
        }
        Ok(())
    }
}
