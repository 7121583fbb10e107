//! Driver and terminal-condition specifications with their declared
//! Lipschitz and growth constants, plus sampled audits of those claims.

use std::sync::Arc;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::rng::path_rng;

pub type DriverFn = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type MomentFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Driver `f(t, x, y, z)` with declared Lipschitz constants in `y` and `z`
/// and a growth envelope in `(t, x)`.
#[derive(Clone)]
pub struct DriverSpec {
    f: DriverFn,
    pub k_y: f64,
    pub k_z: f64,
    /// Growth constant: `|f(t,x,0,0)| <= growth_const * (1 + eta(x))`.
    pub growth_const: f64,
    /// Moment function `eta` for the growth envelope.
    pub eta: MomentFn,
}

impl DriverSpec {
    pub fn new(f: DriverFn, k_y: f64, k_z: f64, growth_const: f64, eta: MomentFn) -> Result<Self> {
        for (name, v) in [("K_Y", k_y), ("K_Z", k_z), ("growth constant", growth_const)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CoreError::Config(format!(
                    "driver {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(Self { f, k_y, k_z, growth_const, eta })
    }

    /// Driver that vanishes identically.
    pub fn zero() -> Self {
        Self {
            f: Arc::new(|_, _: &[f64], _, _: &[f64]| 0.0),
            k_y: 0.0,
            k_z: 0.0,
            growth_const: 0.0,
            eta: Arc::new(|_: &[f64]| 0.0),
        }
    }

    pub fn eval(&self, t: f64, x: &[f64], y: f64, z: &[f64]) -> f64 {
        (self.f)(t, x, y, z)
    }

    /// Sampled audit of the declared Lipschitz constants:
    /// `|f(t,x,y,z) - f(t,x,y',z')| <= K_Y |y-y'| + K_Z ||z-z'|| + 1e-9`
    /// at random points. Returns the violating sample on failure.
    pub fn audit_lipschitz(
        &self,
        dim_x: usize,
        dim_z: usize,
        n_samples: usize,
        seed: u64,
    ) -> Result<()> {
        let mut rng = path_rng(seed, 0);
        for _ in 0..n_samples {
            let t: f64 = rng.gen_range(0.0..1.0);
            let x: Vec<f64> = (0..dim_x).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let y: f64 = rng.gen_range(-3.0..3.0);
            let y2: f64 = rng.gen_range(-3.0..3.0);
            let z: Vec<f64> = (0..dim_z).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let z2: Vec<f64> = (0..dim_z).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let lhs = (self.eval(t, &x, y, &z) - self.eval(t, &x, y2, &z2)).abs();
            let z_dist: f64 =
                z.iter().zip(&z2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let rhs = self.k_y * (y - y2).abs() + self.k_z * z_dist + 1e-9;
            if !(lhs <= rhs) {
                return Err(CoreError::Config(format!(
                    "driver violates its declared Lipschitz constants at \
                     t={t}, x={x:?}, y={y}/{y2}, z={z:?}/{z2:?}: |df|={lhs} > {rhs}"
                )));
            }
        }
        Ok(())
    }
}

/// Terminal condition `g(x)` with declared growth `|g(x)| <= C (1 + zeta(x))`.
#[derive(Clone)]
pub struct TerminalSpec {
    g: TerminalFn,
    pub growth_const: f64,
    pub zeta: MomentFn,
}

impl TerminalSpec {
    pub fn new(g: TerminalFn, growth_const: f64, zeta: MomentFn) -> Result<Self> {
        if !(growth_const.is_finite() && growth_const >= 0.0) {
            return Err(CoreError::Config(format!(
                "terminal growth constant must be finite and nonnegative, got {growth_const}"
            )));
        }
        Ok(Self { g, growth_const, zeta })
    }

    /// Terminal condition with `zeta(x) = ||x||^p`.
    pub fn with_polynomial_growth(g: TerminalFn, growth_const: f64, p: u32) -> Result<Self> {
        Self::new(
            g,
            growth_const,
            Arc::new(move |x: &[f64]| {
                let norm2: f64 = x.iter().map(|v| v * v).sum();
                norm2.sqrt().powi(p as i32)
            }),
        )
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.g)(x)
    }

    /// Checks `|g(x)| <= C (1 + zeta(x))` at the given states.
    pub fn audit_growth<'a>(&self, points: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
        for x in points {
            let gv = self.eval(x);
            if !gv.is_finite() {
                return Err(CoreError::NonFinite(format!("terminal condition at x={x:?}")));
            }
            let envelope = self.growth_const * (1.0 + (self.zeta)(x));
            if gv.abs() > envelope {
                return Err(CoreError::Config(format!(
                    "terminal condition breaks its growth envelope at x={x:?}: \
                     |{gv}| > {envelope}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn honest_lipschitz_declaration_passes_the_audit() {
        let f: DriverFn =
            Arc::new(|_, _: &[f64], y, z: &[f64]| -y + 0.5 * z[0].cos() * z[0] - z[0]);
        // d/dz of 0.5 cos(z) z - z is bounded by 0.5(|z| + 1) + 1 on |z|<=3.
        let spec =
            DriverSpec::new(f, 1.0, 3.0, 1.0, Arc::new(|_: &[f64]| 0.0)).unwrap();
        spec.audit_lipschitz(1, 1, 2000, 9).unwrap();
    }

    #[test]
    fn understated_constants_fail_the_audit() {
        let f: DriverFn = Arc::new(|_, _: &[f64], y, _: &[f64]| -2.0 * y);
        let spec = DriverSpec::new(f, 1.0, 0.0, 0.0, Arc::new(|_: &[f64]| 0.0)).unwrap();
        assert!(matches!(spec.audit_lipschitz(1, 1, 2000, 9), Err(CoreError::Config(_))));
    }

    #[test]
    fn negative_constants_are_rejected() {
        let f: DriverFn = Arc::new(|_, _: &[f64], _, _: &[f64]| 0.0);
        assert!(DriverSpec::new(f, -1.0, 0.0, 0.0, Arc::new(|_: &[f64]| 0.0)).is_err());
    }

    #[test]
    fn growth_audit_accepts_and_rejects() {
        let g: TerminalFn = Arc::new(|x: &[f64]| x[0] * x[0]);
        let ok = TerminalSpec::with_polynomial_growth(g.clone(), 1.0, 2).unwrap();
        let pts: Vec<Vec<f64>> = (-10..=10).map(|k| vec![0.5 * k as f64]).collect();
        ok.audit_growth(pts.iter().map(|p| p.as_slice())).unwrap();

        let lying = TerminalSpec::with_polynomial_growth(g, 0.1, 1).unwrap();
        assert!(lying.audit_growth(pts.iter().map(|p| p.as_slice())).is_err());
    }

    #[test]
    fn zero_driver_is_zero_everywhere() {
        let z = DriverSpec::zero();
        assert_eq!(z.eval(0.3, &[1.0, -2.0], 5.0, &[7.0]), 0.0);
        z.audit_lipschitz(2, 1, 500, 1).unwrap();
    }
}
