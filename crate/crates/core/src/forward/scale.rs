//! Scale-function construction: `h(x) = int_0^x exp(-Sigma(y)) dy`.
//!
//! `h` is the strictly increasing function with `h(0) = 0`, `h'(0) = 1` and
//! `a(h) = 0`; composing the state with `h` removes the drift. `Sigma` is
//! normalized by subtracting `Sigma(0)` so that `h'(0) = 1`; the applied
//! shift is returned, never swallowed.

use crate::error::{CoreError, Result};
use crate::forward::monotone::MonotoneFunction;

/// Output of [`solve_scale_function`]: the tabulated `h` plus the `Sigma(0)`
/// shift that was subtracted to normalize `h'(0) = 1`.
#[derive(Debug, Clone)]
pub struct ScaleSolution {
    pub h: MonotoneFunction,
    pub sigma_shift: f64,
}

/// Tabulates `h` on `domain` by cumulative trapezoid quadrature of
/// `exp(-(Sigma - Sigma(0)))`.
///
/// The grid grows outward from 0 in both directions so that `h(0) = 0` holds
/// exactly and quadrature increments never straddle the origin.
pub fn solve_scale_function(
    sigma_fn: &(dyn Fn(f64) -> f64 + Sync),
    domain: (f64, f64),
    resolution: usize,
) -> Result<ScaleSolution> {
    let (lo, hi) = domain;
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
        return Err(CoreError::Config(format!(
            "scale-function domain [{lo}, {hi}] is not a finite increasing interval"
        )));
    }
    if !(lo <= 0.0 && hi >= 0.0) {
        return Err(CoreError::Config(format!(
            "scale-function domain [{lo}, {hi}] must contain 0"
        )));
    }
    if resolution < 4 {
        return Err(CoreError::Config("scale-function resolution must be at least 4".into()));
    }

    let shift = sigma_fn(0.0);
    if !shift.is_finite() {
        return Err(CoreError::NonFinite("Sigma(0)".into()));
    }
    let hp = |x: f64| -> Result<f64> {
        let s = sigma_fn(x);
        if !s.is_finite() {
            return Err(CoreError::NonFinite(format!("Sigma at x={x}")));
        }
        let v = (-(s - shift)).exp();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(CoreError::NonFinite(format!("exp(-Sigma) at x={x}")))
        }
    };

    let step = (hi - lo) / resolution as f64;
    let right = side_grid(0.0, hi, step);
    let left = side_grid(0.0, lo, step);

    // Cumulative trapezoid outward from 0 on each side.
    let mut xs = Vec::with_capacity(left.len() + right.len() - 1);
    let mut ys = Vec::with_capacity(xs.capacity());
    let mut acc = 0.0;
    let mut prev_x = 0.0;
    let mut prev_hp = hp(0.0)?;
    let mut left_part: Vec<(f64, f64)> = Vec::with_capacity(left.len());
    for &x in left.iter().skip(1) {
        let v = hp(x)?;
        acc += 0.5 * (prev_hp + v) * (x - prev_x);
        left_part.push((x, acc));
        prev_x = x;
        prev_hp = v;
    }
    for &(x, y) in left_part.iter().rev() {
        xs.push(x);
        ys.push(y);
    }
    xs.push(0.0);
    ys.push(0.0);
    acc = 0.0;
    prev_x = 0.0;
    prev_hp = hp(0.0)?;
    for &x in right.iter().skip(1) {
        let v = hp(x)?;
        acc += 0.5 * (prev_hp + v) * (x - prev_x);
        xs.push(x);
        ys.push(acc);
        prev_x = x;
        prev_hp = v;
    }

    let h = MonotoneFunction::new(xs, ys).map_err(|e| {
        CoreError::Numerical(format!(
            "tabulated h is not strictly increasing on [{lo}, {hi}] \
             (exp(-Sigma) vanished at double precision): {e}"
        ))
    })?;
    Ok(ScaleSolution { h, sigma_shift: shift })
}

/// Nodes from 0 toward `end` in steps of `step`, with the last node pinned to
/// `end`. Works for either sign of `end`; the origin is always a node.
fn side_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let mut nodes = vec![start];
    if end == start {
        return nodes;
    }
    let dir = (end - start).signum();
    let mut x = start;
    loop {
        x += dir * step;
        if (end - x) * dir <= 0.5 * step {
            nodes.push(end);
            return nodes;
        }
        nodes.push(x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_sigma_gives_identity() {
        let sol = solve_scale_function(&|_| 0.0, (-2.0, 3.0), 5000).unwrap();
        assert_eq!(sol.sigma_shift, 0.0);
        let (xs, ys) = sol.h.knots();
        for (x, y) in xs.iter().zip(ys.iter()) {
            assert_eq!(x, y, "identity table must be bit-exact at knots");
        }
        for k in 0..100 {
            let x = -2.0 + 5.0 * k as f64 / 99.0;
            assert!((sol.h.eval(x).unwrap() - x).abs() <= 1e-13);
        }
    }

    #[test]
    fn kinked_sigma_matches_closed_antiderivative() {
        // Sigma(x) = 2|x|  =>  h(x) = sign(x) (1 - exp(-2|x|)) / 2.
        let sol = solve_scale_function(&|x: f64| 2.0 * x.abs(), (-3.0, 3.0), 60_000).unwrap();
        let cases = [
            (-1.0, -0.43233235838169365),
            (0.5, 0.31606027941427883),
            (2.0, 0.4908421805556329),
        ];
        for (x, expected) in cases {
            let got = sol.h.eval(x).unwrap();
            assert!((got - expected).abs() <= 1e-6, "h({x}) = {got}, want {expected}");
        }
    }

    #[test]
    fn exponential_sigma_matches_exact_integral() {
        // Sigma(x) = x  =>  h(x) = 1 - exp(-x).
        let sol = solve_scale_function(&|x| x, (-2.0, 2.0), 40_000).unwrap();
        let got = sol.h.eval(1.0).unwrap();
        assert!((got - 0.6321205588285577).abs() <= 1e-6, "h(1) = {got}");
    }

    #[test]
    fn sigma_shift_is_reported_not_swallowed() {
        let plain = solve_scale_function(&|x| x, (-1.0, 1.5), 20_000).unwrap();
        let shifted = solve_scale_function(&|x| x + 5.0, (-1.0, 1.5), 20_000).unwrap();
        assert_eq!(shifted.sigma_shift, 5.0);
        assert_eq!(plain.sigma_shift, 0.0);
        let a = plain.h.eval(1.0).unwrap();
        let b = shifted.h.eval(1.0).unwrap();
        assert!((a - b).abs() <= 1e-12, "shift must not change h: {a} vs {b}");
    }

    #[test]
    fn non_finite_sigma_is_an_error() {
        let res = solve_scale_function(&|x: f64| if x > 0.5 { f64::INFINITY } else { 0.0 }, (-1.0, 1.0), 100);
        assert!(matches!(res, Err(CoreError::NonFinite(_))));
        // exp(-Sigma) overflow on the negative side is also non-finite
        let res = solve_scale_function(&|x: f64| 2000.0 * x, (-1.0, 1.0), 100);
        assert!(res.is_err());
    }

    #[test]
    fn domain_must_contain_zero() {
        assert!(solve_scale_function(&|_| 0.0, (0.5, 1.0), 100).is_err());
        assert!(solve_scale_function(&|_| 0.0, (1.0, 0.5), 100).is_err());
    }

    #[test]
    fn saturated_table_is_reported() {
        // exp(-Sigma) underflows for x past ~350; h flattens and the table
        // stops being strictly increasing.
        let res = solve_scale_function(&|x: f64| 2.0 * x.abs(), (-800.0, 800.0), 3200);
        assert!(res.is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn h_is_increasing_with_unit_slope_at_zero(
            a in -1.5..1.5f64,
            b in -0.8..0.8f64,
            c in 0.0..1.0f64,
        ) {
            let sigma = move |x: f64| a * x + b * x * x + c * x.sin();
            let sol = solve_scale_function(&sigma, (-1.5, 1.5), 6000).unwrap();
            prop_assert_eq!(sol.h.eval(0.0).unwrap(), 0.0);
            // unit derivative at the origin via a centered difference
            let d = (sol.h.eval(1e-4).unwrap() - sol.h.eval(-1e-4).unwrap()) / 2e-4;
            prop_assert!((d - 1.0).abs() <= 1e-4);
            let mut prev = sol.h.eval(-1.5).unwrap();
            for k in 1..=60 {
                let x = -1.5 + 3.0 * k as f64 / 60.0;
                let y = sol.h.eval(x).unwrap();
                prop_assert!(y > prev);
                prev = y;
            }
            // inverse round trip
            let y = sol.h.eval(0.7).unwrap();
            prop_assert!((sol.h.inverse(y).unwrap() - 0.7).abs() <= 1e-8);
        }
    }
}
