//! Space-time test functions with optional analytic derivatives.
//!
//! Generator applications need a time derivative, a gradient, and a Hessian.
//! When analytic closures are supplied they are used directly (and can be
//! audited against finite differences); otherwise central differences fill
//! in, with a step of `1e-5 * (1 + |coordinate|)` for first derivatives and
//! `eps^(1/4) * (1 + |coordinate|)` for second ones, where the smaller step
//! would lose too much to rounding.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{CoreError, Result};

pub type SpaceTimeFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type SpaceTimeVecFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
pub type SpaceTimeMatFn = Arc<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>;

/// Declared growth of a test function, trusted and only spot-checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Growth {
    Bounded,
    Polynomial(u32),
}

impl Growth {
    fn combine_product(self, other: Growth) -> Growth {
        match (self, other) {
            (Growth::Bounded, g) | (g, Growth::Bounded) => g,
            (Growth::Polynomial(p), Growth::Polynomial(q)) => Growth::Polynomial(p + q),
        }
    }

    fn combine_sum(self, other: Growth) -> Growth {
        match (self, other) {
            (Growth::Bounded, g) | (g, Growth::Bounded) => g,
            (Growth::Polynomial(p), Growth::Polynomial(q)) => Growth::Polynomial(p.max(q)),
        }
    }
}

#[derive(Clone)]
pub struct TestFunction {
    dim: usize,
    value: SpaceTimeFn,
    time_deriv: Option<SpaceTimeFn>,
    gradient: Option<SpaceTimeVecFn>,
    hessian: Option<SpaceTimeMatFn>,
    growth: Growth,
}

const FD_FIRST: f64 = 1e-5;

fn fd_second_step(coord: f64) -> f64 {
    // eps^(1/4): balances truncation against the 1/h^2 rounding blowup.
    1.22e-4 * (1.0 + coord.abs())
}

fn fd_first_step(coord: f64) -> f64 {
    FD_FIRST * (1.0 + coord.abs())
}

impl TestFunction {
    pub fn new(dim: usize, value: SpaceTimeFn, growth: Growth) -> Self {
        Self { dim, value, time_deriv: None, gradient: None, hessian: None, growth }
    }

    pub fn with_derivatives(
        dim: usize,
        value: SpaceTimeFn,
        time_deriv: SpaceTimeFn,
        gradient: SpaceTimeVecFn,
        hessian: SpaceTimeMatFn,
        growth: Growth,
    ) -> Self {
        Self {
            dim,
            value,
            time_deriv: Some(time_deriv),
            gradient: Some(gradient),
            hessian: Some(hessian),
            growth,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn growth(&self) -> Growth {
        self.growth
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        self.time_deriv.is_some() && self.gradient.is_some() && self.hessian.is_some()
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        (self.value)(t, x)
    }

    pub fn time_derivative(&self, t: f64, x: &[f64]) -> Result<f64> {
        if let Some(dt) = &self.time_deriv {
            return Ok(dt(t, x));
        }
        let h = fd_first_step(t);
        let (a, b) = ((self.value)(t + h, x), (self.value)(t - h, x));
        finite_pair(a, b, t, x)?;
        Ok((a - b) / (2.0 * h))
    }

    pub fn gradient(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        if let Some(g) = &self.gradient {
            return Ok(g(t, x));
        }
        let mut out = Vec::with_capacity(self.dim);
        let mut xs = x.to_vec();
        for i in 0..self.dim {
            let h = fd_first_step(x[i]);
            xs[i] = x[i] + h;
            let a = (self.value)(t, &xs);
            xs[i] = x[i] - h;
            let b = (self.value)(t, &xs);
            xs[i] = x[i];
            finite_pair(a, b, t, x)?;
            out.push((a - b) / (2.0 * h));
        }
        Ok(out)
    }

    pub fn hessian(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        if let Some(h) = &self.hessian {
            return Ok(h(t, x));
        }
        let d = self.dim;
        let mut out = DMatrix::zeros(d, d);
        let center = (self.value)(t, x);
        let mut xs = x.to_vec();
        for i in 0..d {
            let hi = fd_second_step(x[i]);
            xs[i] = x[i] + hi;
            let a = (self.value)(t, &xs);
            xs[i] = x[i] - hi;
            let b = (self.value)(t, &xs);
            xs[i] = x[i];
            finite_pair(a, b, t, x)?;
            out[(i, i)] = (a - 2.0 * center + b) / (hi * hi);
            for j in (i + 1)..d {
                let hj = fd_second_step(x[j]);
                let mut probe = |si: f64, sj: f64| {
                    xs[i] = x[i] + si * hi;
                    xs[j] = x[j] + sj * hj;
                    let v = (self.value)(t, &xs);
                    xs[i] = x[i];
                    xs[j] = x[j];
                    v
                };
                let pp = probe(1.0, 1.0);
                let pm = probe(1.0, -1.0);
                let mp = probe(-1.0, 1.0);
                let mm = probe(-1.0, -1.0);
                finite_pair(pp, pm, t, x)?;
                finite_pair(mp, mm, t, x)?;
                let v = (pp - pm - mp + mm) / (4.0 * hi * hj);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        if !center.is_finite() {
            return Err(CoreError::NonFinite(format!("test function at (t={t}, x={x:?})")));
        }
        Ok(out)
    }

    /// Audits analytic derivatives against central differences at the given
    /// points; relative tolerance 1e-6.
    pub fn verify_derivatives(&self, points: &[(f64, Vec<f64>)]) -> Result<()> {
        if !self.has_analytic_derivatives() {
            return Ok(());
        }
        let numeric = Self::new(self.dim, self.value.clone(), self.growth);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * (1.0 + a.abs().max(b.abs()));
        for (t, x) in points {
            let (t, x) = (*t, x.as_slice());
            let (adt, ndt) = (self.time_derivative(t, x)?, numeric.time_derivative(t, x)?);
            if !close(adt, ndt) {
                return Err(CoreError::Numerical(format!(
                    "time derivative mismatch at (t={t}, x={x:?}): analytic {adt}, numeric {ndt}"
                )));
            }
            let (ag, ng) = (self.gradient(t, x)?, numeric.gradient(t, x)?);
            for i in 0..self.dim {
                if !close(ag[i], ng[i]) {
                    return Err(CoreError::Numerical(format!(
                        "gradient component {i} mismatch at (t={t}, x={x:?}): \
                         analytic {}, numeric {}",
                        ag[i], ng[i]
                    )));
                }
            }
            let (ah, nh) = (self.hessian(t, x)?, numeric.hessian(t, x)?);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    if !close(ah[(i, j)], nh[(i, j)]) {
                        return Err(CoreError::Numerical(format!(
                            "hessian entry ({i},{j}) mismatch at (t={t}, x={x:?}): \
                             analytic {}, numeric {}",
                            ah[(i, j)],
                            nh[(i, j)]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::with_derivatives(
            dim,
            Arc::new(move |_, _| c),
            Arc::new(|_, _| 0.0),
            Arc::new(move |_, _: &[f64]| vec![0.0; dim]),
            Arc::new(move |_, _: &[f64]| DMatrix::zeros(dim, dim)),
            Growth::Bounded,
        )
    }

    /// The coordinate function `x_i`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        assert!(i < dim, "coordinate index {i} out of range for dim {dim}");
        Self::with_derivatives(
            dim,
            Arc::new(move |_, x: &[f64]| x[i]),
            Arc::new(|_, _| 0.0),
            Arc::new(move |_, _: &[f64]| {
                let mut g = vec![0.0; dim];
                g[i] = 1.0;
                g
            }),
            Arc::new(move |_, _: &[f64]| DMatrix::zeros(dim, dim)),
            Growth::Polynomial(1),
        )
    }

    /// Time-independent polynomial `sum_k c_k * prod_i x_i^{p_{k,i}}` with
    /// exact analytic derivatives.
    pub fn polynomial(dim: usize, terms: Vec<(f64, Vec<u32>)>) -> Self {
        for (_, powers) in &terms {
            assert_eq!(powers.len(), dim, "power vector length must equal dim");
        }
        let degree = terms
            .iter()
            .map(|(_, p)| p.iter().sum::<u32>())
            .max()
            .unwrap_or(0);
        let eval_term = |c: f64, powers: &[u32], x: &[f64]| -> f64 {
            let mut v = c;
            for (xi, p) in x.iter().zip(powers.iter()) {
                v *= xi.powi(*p as i32);
            }
            v
        };
        let t_value = terms.clone();
        let value: SpaceTimeFn = Arc::new(move |_, x: &[f64]| {
            t_value.iter().map(|(c, p)| eval_term(*c, p, x)).sum()
        });
        let t_grad = terms.clone();
        let gradient: SpaceTimeVecFn = Arc::new(move |_, x: &[f64]| {
            let mut g = vec![0.0; dim];
            for (c, powers) in &t_grad {
                for i in 0..dim {
                    if powers[i] == 0 {
                        continue;
                    }
                    let mut v = c * powers[i] as f64;
                    for (j, p) in powers.iter().enumerate() {
                        let p = if j == i { p - 1 } else { *p };
                        v *= x[j].powi(p as i32);
                    }
                    g[i] += v;
                }
            }
            g
        });
        let t_hess = terms;
        let hessian: SpaceTimeMatFn = Arc::new(move |_, x: &[f64]| {
            let mut h = DMatrix::zeros(dim, dim);
            for (c, powers) in &t_hess {
                for i in 0..dim {
                    for j in 0..dim {
                        let (pi, pj) = (powers[i], powers[j]);
                        let factor = if i == j {
                            if pi < 2 {
                                continue;
                            }
                            (pi * (pi - 1)) as f64
                        } else {
                            if pi == 0 || pj == 0 {
                                continue;
                            }
                            (pi * pj) as f64
                        };
                        let mut v = c * factor;
                        for (k, p) in powers.iter().enumerate() {
                            let mut p = *p;
                            if k == i {
                                p -= 1;
                            }
                            if k == j {
                                p -= 1;
                            }
                            v *= x[k].powi(p as i32);
                        }
                        h[(i, j)] += v;
                    }
                }
            }
            h
        });
        Self::with_derivatives(
            dim,
            value,
            Arc::new(|_, _| 0.0),
            gradient,
            hessian,
            Growth::Polynomial(degree),
        )
    }

    /// `a * f + b * g`, with derivatives combined when both sides have them.
    pub fn linear_combination(a: f64, f: &TestFunction, b: f64, g: &TestFunction) -> Self {
        assert_eq!(f.dim, g.dim, "dimensions must match");
        let dim = f.dim;
        let (fv, gv) = (f.value.clone(), g.value.clone());
        let value: SpaceTimeFn = Arc::new(move |t, x: &[f64]| a * fv(t, x) + b * gv(t, x));
        let growth = f.growth.combine_sum(g.growth);
        if !(f.has_analytic_derivatives() && g.has_analytic_derivatives()) {
            return Self::new(dim, value, growth);
        }
        let (fdt, gdt) = (f.time_deriv.clone().unwrap(), g.time_deriv.clone().unwrap());
        let (fg, gg) = (f.gradient.clone().unwrap(), g.gradient.clone().unwrap());
        let (fh, gh) = (f.hessian.clone().unwrap(), g.hessian.clone().unwrap());
        Self::with_derivatives(
            dim,
            value,
            Arc::new(move |t, x: &[f64]| a * fdt(t, x) + b * gdt(t, x)),
            Arc::new(move |t, x: &[f64]| {
                let (u, v) = (fg(t, x), gg(t, x));
                (0..dim).map(|i| a * u[i] + b * v[i]).collect()
            }),
            Arc::new(move |t, x: &[f64]| {
                let (u, v) = (fh(t, x), gh(t, x));
                u * a + v * b
            }),
            growth,
        )
    }

    /// Pointwise product `f * g` with product-rule derivatives.
    pub fn product(f: &TestFunction, g: &TestFunction) -> Self {
        assert_eq!(f.dim, g.dim, "dimensions must match");
        let dim = f.dim;
        let (fv, gv) = (f.value.clone(), g.value.clone());
        let value: SpaceTimeFn = Arc::new(move |t, x: &[f64]| fv(t, x) * gv(t, x));
        let growth = f.growth.combine_product(g.growth);
        if !(f.has_analytic_derivatives() && g.has_analytic_derivatives()) {
            return Self::new(dim, value, growth);
        }
        let (fv, gv) = (f.value.clone(), g.value.clone());
        let (fdt, gdt) = (f.time_deriv.clone().unwrap(), g.time_deriv.clone().unwrap());
        let time_deriv: SpaceTimeFn =
            Arc::new(move |t, x: &[f64]| fdt(t, x) * gv(t, x) + fv(t, x) * gdt(t, x));
        let (fv, gv) = (f.value.clone(), g.value.clone());
        let (fg, gg) = (f.gradient.clone().unwrap(), g.gradient.clone().unwrap());
        let gradient: SpaceTimeVecFn = Arc::new(move |t, x: &[f64]| {
            let (u, v) = (fg(t, x), gg(t, x));
            let (a, b) = (fv(t, x), gv(t, x));
            (0..dim).map(|i| u[i] * b + a * v[i]).collect()
        });
        let (fv, gv) = (f.value.clone(), g.value.clone());
        let (fg, gg) = (f.gradient.clone().unwrap(), g.gradient.clone().unwrap());
        let (fh, gh) = (f.hessian.clone().unwrap(), g.hessian.clone().unwrap());
        let hessian: SpaceTimeMatFn = Arc::new(move |t, x: &[f64]| {
            let (hf, hg) = (fh(t, x), gh(t, x));
            let (u, v) = (fg(t, x), gg(t, x));
            let (a, b) = (fv(t, x), gv(t, x));
            let mut out = hf * b;
            for i in 0..dim {
                for j in 0..dim {
                    out[(i, j)] += u[i] * v[j] + v[i] * u[j] + a * hg[(i, j)];
                }
            }
            out
        });
        Self::with_derivatives(dim, value, time_deriv, gradient, hessian, growth)
    }
}

fn finite_pair(a: f64, b: f64, t: f64, x: &[f64]) -> Result<()> {
    if a.is_finite() && b.is_finite() {
        Ok(())
    } else {
        Err(CoreError::NonFinite(format!(
            "test function probed near (t={t}, x={x:?}) for finite differences"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_points() -> Vec<(f64, Vec<f64>)> {
        let mut pts = Vec::new();
        for k in 0..12 {
            let t = 0.1 * k as f64;
            pts.push((t, vec![-1.5 + 0.3 * k as f64, 0.7 - 0.2 * k as f64]));
        }
        pts
    }

    #[test]
    fn polynomial_derivatives_agree_with_finite_differences() {
        let f = TestFunction::polynomial(
            2,
            vec![(1.5, vec![2, 1]), (-0.75, vec![0, 3]), (2.0, vec![1, 0])],
        );
        f.verify_derivatives(&sample_points()).unwrap();
    }

    #[test]
    fn smooth_function_with_analytic_derivatives_passes_audit() {
        let f = TestFunction::with_derivatives(
            1,
            Arc::new(|t, x: &[f64]| (t + x[0]).sin()),
            Arc::new(|t, x: &[f64]| (t + x[0]).cos()),
            Arc::new(|t, x: &[f64]| vec![(t + x[0]).cos()]),
            Arc::new(|t, x: &[f64]| DMatrix::from_element(1, 1, -(t + x[0]).sin())),
            Growth::Bounded,
        );
        f.verify_derivatives(&sample_points().iter().map(|(t, x)| (*t, vec![x[0]])).collect::<Vec<_>>())
            .unwrap();
    }

    #[test]
    fn wrong_analytic_derivatives_are_caught() {
        let f = TestFunction::with_derivatives(
            1,
            Arc::new(|_, x: &[f64]| x[0] * x[0]),
            Arc::new(|_, _| 0.0),
            Arc::new(|_, x: &[f64]| vec![2.0 * x[0] + 0.01]),
            Arc::new(|_, _: &[f64]| DMatrix::from_element(1, 1, 2.0)),
            Growth::Polynomial(2),
        );
        assert!(f.verify_derivatives(&[(0.0, vec![1.0])]).is_err());
    }

    #[test]
    fn numeric_fallback_handles_time_dependence() {
        let f = TestFunction::new(
            1,
            Arc::new(|t, x: &[f64]| t * t * x[0] + t),
            Growth::Polynomial(1),
        );
        let dt = f.time_derivative(0.5, &[2.0]).unwrap();
        assert!((dt - (2.0 * 0.5 * 2.0 + 1.0)).abs() <= 1e-8, "{dt}");
        let g = f.gradient(0.5, &[2.0]).unwrap();
        assert!((g[0] - 0.25).abs() <= 1e-9);
    }

    #[test]
    fn cross_second_derivatives_are_symmetric_and_accurate() {
        let f = TestFunction::new(
            2,
            Arc::new(|_, x: &[f64]| (x[0] * x[1]).exp()),
            Growth::Polynomial(6),
        );
        let h = f.hessian(0.0, &[0.3, -0.4]).unwrap();
        let e = (0.3f64 * -0.4).exp();
        let exact_01 = e * (1.0 + 0.3 * -0.4);
        assert!((h[(0, 1)] - exact_01).abs() <= 1e-6, "{}", h[(0, 1)]);
        assert_eq!(h[(0, 1)], h[(1, 0)]);
        let exact_00 = e * 0.4 * 0.4;
        assert!((h[(0, 0)] - exact_00).abs() <= 1e-6, "{}", h[(0, 0)]);
    }

    #[test]
    fn probing_a_pole_is_a_finite_error() {
        // Time probes at x = 0 evaluate 1/0 directly.
        let f = TestFunction::new(1, Arc::new(|_, x: &[f64]| 1.0 / x[0]), Growth::Bounded);
        assert!(matches!(f.time_derivative(0.0, &[0.0]), Err(CoreError::NonFinite(_))));
        // Space probes just below the branch point leave the domain of ln.
        let g = TestFunction::new(1, Arc::new(|_, x: &[f64]| x[0].ln()), Growth::Bounded);
        assert!(matches!(g.gradient(0.0, &[1e-6]), Err(CoreError::NonFinite(_))));
        assert!(matches!(g.hessian(0.0, &[1e-6]), Err(CoreError::NonFinite(_))));
    }

    #[test]
    fn products_and_combinations_propagate_derivatives() {
        let x = TestFunction::coordinate(1, 0);
        let x2 = TestFunction::product(&x, &x);
        assert!(x2.has_analytic_derivatives());
        assert_eq!(x2.eval(0.0, &[3.0]), 9.0);
        assert_eq!(x2.gradient(0.0, &[3.0]).unwrap()[0], 6.0);
        assert_eq!(x2.hessian(0.0, &[3.0]).unwrap()[(0, 0)], 2.0);
        assert_eq!(x2.growth(), Growth::Polynomial(2));

        let lc = TestFunction::linear_combination(2.0, &x2, -1.0, &x);
        assert_eq!(lc.eval(0.0, &[3.0]), 15.0);
        assert_eq!(lc.gradient(0.0, &[3.0]).unwrap()[0], 11.0);
        lc.verify_derivatives(&[(0.0, vec![0.5]), (1.0, vec![-2.0])]).unwrap();
    }
}
