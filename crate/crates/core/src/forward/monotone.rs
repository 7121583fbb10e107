//! Strictly increasing tabulated functions with monotone cubic interpolation
//! (Fritsch-Carlson slopes) and inverse evaluation.

use crate::error::{CoreError, Result};

/// A strictly increasing function carried by `(x, y)` samples.
///
/// Interpolation is monotone piecewise-cubic Hermite, so the interpolant is
/// strictly increasing between knots whenever the data are. Inverse
/// evaluation solves the cubic on the bracketing segment with a safeguarded
/// Newton iteration.
#[derive(Debug, Clone)]
pub struct MonotoneFunction {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneFunction {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(CoreError::Config(format!(
                "monotone table needs matching x/y samples with at least two rows, got {} and {}",
                xs.len(),
                ys.len()
            )));
        }
        for w in xs.windows(2) {
            if !(w[0].is_finite() && w[1].is_finite()) || w[1] <= w[0] {
                return Err(CoreError::Config(
                    "monotone table abscissae must be finite and strictly increasing".into(),
                ));
            }
        }
        for w in ys.windows(2) {
            if !(w[0].is_finite() && w[1].is_finite()) || w[1] <= w[0] {
                return Err(CoreError::Config(
                    "monotone table values must be finite and strictly increasing".into(),
                ));
            }
        }
        let slopes = fritsch_carlson_slopes(&xs, &ys);
        Ok(Self { xs, ys, slopes })
    }

    pub fn x_min(&self) -> f64 {
        self.xs[0]
    }

    pub fn x_max(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    pub fn y_min(&self) -> f64 {
        self.ys[0]
    }

    pub fn y_max(&self) -> f64 {
        *self.ys.last().unwrap()
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }

    /// Segment index `i` with `xs[i] <= x <= xs[i+1]`.
    fn segment(&self, x: f64) -> usize {
        match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.xs.len() - 2),
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(x >= self.x_min() && x <= self.x_max()) {
            return Err(CoreError::Domain(format!(
                "x={x} outside tabulated range [{}, {}]",
                self.x_min(),
                self.x_max()
            )));
        }
        let i = self.segment(x);
        if x == self.xs[i] {
            return Ok(self.ys[i]);
        }
        if x == self.xs[i + 1] {
            return Ok(self.ys[i + 1]);
        }
        Ok(self.eval_segment(i, x))
    }

    fn eval_segment(&self, i: usize, x: f64) -> f64 {
        let h = self.xs[i + 1] - self.xs[i];
        let d = (self.ys[i + 1] - self.ys[i]) / h;
        let (m0, m1) = (self.slopes[i], self.slopes[i + 1]);
        let c = (3.0 * d - 2.0 * m0 - m1) / h;
        let e = (m0 + m1 - 2.0 * d) / (h * h);
        let dx = x - self.xs[i];
        self.ys[i] + dx * (m0 + dx * (c + dx * e))
    }

    fn eval_segment_derivative(&self, i: usize, x: f64) -> f64 {
        let h = self.xs[i + 1] - self.xs[i];
        let d = (self.ys[i + 1] - self.ys[i]) / h;
        let (m0, m1) = (self.slopes[i], self.slopes[i + 1]);
        let c = (3.0 * d - 2.0 * m0 - m1) / h;
        let e = (m0 + m1 - 2.0 * d) / (h * h);
        let dx = x - self.xs[i];
        m0 + dx * (2.0 * c + dx * 3.0 * e)
    }

    /// Solves `self(x) = y`. The iterate stays inside the bracketing segment;
    /// bisection takes over whenever Newton would leave it.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        if !(y >= self.y_min() && y <= self.y_max()) {
            return Err(CoreError::Domain(format!(
                "y={y} outside tabulated range [{}, {}]",
                self.y_min(),
                self.y_max()
            )));
        }
        let i = match self.ys.binary_search_by(|v| v.partial_cmp(&y).unwrap()) {
            Ok(i) => return Ok(self.xs[i]),
            Err(i) => i.saturating_sub(1).min(self.ys.len() - 2),
        };
        let (mut lo, mut hi) = (self.xs[i], self.xs[i + 1]);
        let d = (self.ys[i + 1] - self.ys[i]) / (hi - lo);
        let mut x = lo + (y - self.ys[i]) / d;
        let ytol = 1e-15 * (1.0 + y.abs());
        for _ in 0..64 {
            if !(x > lo && x < hi) {
                x = 0.5 * (lo + hi);
            }
            let fx = self.eval_segment(i, x);
            let err = fx - y;
            if err.abs() <= ytol {
                return Ok(x);
            }
            if err > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let slope = self.eval_segment_derivative(i, x);
            if slope > 0.0 {
                x -= err / slope;
            } else {
                x = 0.5 * (lo + hi);
            }
            if hi - lo <= f64::EPSILON * (1.0 + x.abs()) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Fritsch-Carlson knot slopes: keep the Hermite interpolant monotone.
fn fritsch_carlson_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let d: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    let mut m = vec![0.0; n];
    m[0] = endpoint_slope(h[0], h.get(1).copied(), d[0], d.get(1).copied());
    m[n - 1] = endpoint_slope(
        h[n - 2],
        if n >= 3 { Some(h[n - 3]) } else { None },
        d[n - 2],
        if n >= 3 { Some(d[n - 3]) } else { None },
    );
    for i in 1..n - 1 {
        if d[i - 1] == d[i] {
            // Uniform secants (e.g. linear data): keep the slope bit-exact.
            m[i] = d[i];
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
        }
    }
    m
}

/// Three-point endpoint slope, clamped to preserve monotonicity.
fn endpoint_slope(h0: f64, h1: Option<f64>, d0: f64, d1: Option<f64>) -> f64 {
    let (h1, d1) = match (h1, d1) {
        (Some(h1), Some(d1)) => (h1, d1),
        _ => return d0,
    };
    if d0 == d1 {
        return d0;
    }
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m <= 0.0 {
        0.0
    } else if m > 3.0 * d0 {
        3.0 * d0
    } else {
        m
    }
}
