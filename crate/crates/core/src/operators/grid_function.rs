//! Tensor-product space-time grid functions with multilinear interpolation.
//!
//! A `GridFunction` stores values on `times x axis_1 x ... x axis_d` and
//! interpolates multilinearly in between; evaluation at a grid node returns
//! the stored value exactly. Functions round-trip through CSV with one row
//! per node (`t, x_1, .., x_d, value`).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    times: Vec<f64>,
    axes: Vec<Vec<f64>>,
    /// Time-major, then row-major over the space axes.
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(times: Vec<f64>, axes: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        check_axis("time", &times)?;
        if axes.is_empty() {
            return Err(CoreError::Config("grid function needs at least one space axis".into()));
        }
        for (i, axis) in axes.iter().enumerate() {
            check_axis(&format!("space axis {i}"), axis)?;
        }
        let expected: usize = times.len() * axes.iter().map(Vec::len).product::<usize>();
        if values.len() != expected {
            return Err(CoreError::Config(format!(
                "grid function needs {expected} values for its node count, got {}",
                values.len()
            )));
        }
        for v in &values {
            if !v.is_finite() {
                return Err(CoreError::NonFinite("grid function value".into()));
            }
        }
        Ok(Self { times, axes, values })
    }

    pub fn from_fn(
        times: Vec<f64>,
        axes: Vec<Vec<f64>>,
        f: impl Fn(f64, &[f64]) -> f64,
    ) -> Result<Self> {
        let n_space: usize = axes.iter().map(Vec::len).product();
        let mut values = Vec::with_capacity(times.len() * n_space);
        let mut x = vec![0.0; axes.len()];
        for &t in &times {
            for flat in 0..n_space {
                unflatten(&axes, flat, &mut x);
                values.push(f(t, &x));
            }
        }
        Self::new(times, axes, values)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored value at time index `ti` and per-axis space indices `ix`.
    pub fn value_at(&self, ti: usize, ix: &[usize]) -> f64 {
        assert_eq!(ix.len(), self.axes.len());
        let mut flat = ti;
        for (k, &i) in ix.iter().enumerate() {
            flat = flat * self.axes[k].len() + i;
        }
        self.values[flat]
    }

    fn flat_space(&self, ix: &[usize]) -> usize {
        let mut flat = 0;
        for (k, &i) in ix.iter().enumerate() {
            flat = flat * self.axes[k].len() + i;
        }
        flat
    }

    /// Multilinear interpolation inside the grid hull; exact at nodes.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64> {
        let (value, clamped) = self.eval_with_flag(t, x, false)?;
        debug_assert!(!clamped);
        Ok(value)
    }

    /// Like `eval`, but clamps out-of-hull points to the boundary and flags
    /// that the clamp happened.
    pub fn eval_clamped(&self, t: f64, x: &[f64]) -> Result<(f64, bool)> {
        self.eval_with_flag(t, x, true)
    }

    fn eval_with_flag(&self, t: f64, x: &[f64], clamp: bool) -> Result<(f64, bool)> {
        if x.len() != self.axes.len() {
            return Err(CoreError::Config(format!(
                "grid function of dimension {} evaluated at a point of dimension {}",
                self.axes.len(),
                x.len()
            )));
        }
        if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite(format!("evaluation point (t={t}, x={x:?})")));
        }
        let mut clamped = false;
        let mut coords = Vec::with_capacity(1 + x.len());
        coords.push(locate(&self.times, t, clamp, &mut clamped)?);
        for (axis, &v) in self.axes.iter().zip(x.iter()) {
            coords.push(locate(axis, v, clamp, &mut clamped)?);
        }

        // Gather the 2^(d+1) cell corners (bit k of the mask picks the upper
        // node of coordinate k), then collapse one coordinate at a time with
        // `a + w·(b − a)`. That form returns `a` bitwise when the two corner
        // values agree, so interpolating a constant field is exact.
        let n_corners = 1usize << coords.len();
        let n_space: usize = self.axes.iter().map(Vec::len).product();
        let mut vals = Vec::with_capacity(n_corners);
        let mut ix = vec![0usize; x.len()];
        for mask in 0..n_corners {
            let mut ti = 0usize;
            for (k, &(idx, _)) in coords.iter().enumerate() {
                let len = if k == 0 { self.times.len() } else { self.axes[k - 1].len() };
                // Single-node coordinates have no upper corner; the lerp
                // weight there is 0, so reusing the lone node is exact.
                let node = if mask & (1 << k) != 0 { (idx + 1).min(len - 1) } else { idx };
                if k == 0 {
                    ti = node;
                } else {
                    ix[k - 1] = node;
                }
            }
            vals.push(self.values[ti * n_space + self.flat_space(&ix)]);
        }
        for (k, &(_, frac)) in coords.iter().enumerate().rev() {
            let half = 1usize << k;
            for m in 0..half {
                let (a, b) = (vals[m], vals[m + half]);
                vals[m] = if frac == 0.0 {
                    a
                } else if frac == 1.0 {
                    b
                } else {
                    a + frac * (b - a)
                };
            }
        }
        Ok((vals[0], clamped))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let d = self.axes.len();
        let mut header = vec!["t".to_string()];
        for i in 1..=d {
            header.push(format!("x_{i}"));
        }
        header.push("value".to_string());
        out.write_record(&header)?;
        let n_space: usize = self.axes.iter().map(Vec::len).product();
        let mut x = vec![0.0; d];
        let mut row = Vec::with_capacity(d + 2);
        for (ti, &t) in self.times.iter().enumerate() {
            for flat in 0..n_space {
                unflatten(&self.axes, flat, &mut x);
                row.clear();
                row.push(format!("{t}"));
                for &xi in &x {
                    row.push(format!("{xi}"));
                }
                row.push(format!("{}", self.values[ti * n_space + flat]));
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let header = reader.headers()?.clone();
        if header.len() < 3 || &header[0] != "t" || &header[header.len() - 1] != "value" {
            return Err(CoreError::Config(format!(
                "grid function CSV needs columns t, x_1.., value; got {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let d = header.len() - 2;
        let mut rows: Vec<(f64, Vec<f64>, f64)> = Vec::new();
        for record in reader.records() {
            let record = record?;
            if record.len() != d + 2 {
                return Err(CoreError::Config(format!(
                    "grid function CSV row has {} fields, expected {}",
                    record.len(),
                    d + 2
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                let v: f64 = s
                    .trim()
                    .parse()
                    .map_err(|_| CoreError::Config(format!("bad number {s:?} in CSV")))?;
                if !v.is_finite() {
                    return Err(CoreError::NonFinite(format!("CSV entry {s:?}")));
                }
                Ok(v)
            };
            let t = parse(&record[0])?;
            let x: Vec<f64> = (1..=d).map(|i| parse(&record[i])).collect::<Result<_>>()?;
            let v = parse(&record[d + 1])?;
            rows.push((t, x, v));
        }
        if rows.is_empty() {
            return Err(CoreError::Config("grid function CSV has no data rows".into()));
        }

        let times = unique_sorted(rows.iter().map(|r| r.0));
        let axes: Vec<Vec<f64>> =
            (0..d).map(|k| unique_sorted(rows.iter().map(|r| r.1[k]))).collect();
        let n_space: usize = axes.iter().map(Vec::len).product();
        let mut values = vec![None; times.len() * n_space];
        for (t, x, v) in rows {
            let ti = exact_index(&times, t)?;
            let mut flat = 0usize;
            for (k, axis) in axes.iter().enumerate() {
                flat = flat * axis.len() + exact_index(axis, x[k])?;
            }
            let slot = &mut values[ti * n_space + flat];
            if slot.is_some() {
                return Err(CoreError::Config(format!(
                    "grid function CSV repeats the node (t={t}, x={x:?})"
                )));
            }
            *slot = Some(v);
        }
        let values: Vec<f64> = values
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| {
                CoreError::Config(
                    "grid function CSV does not cover the full tensor grid".into(),
                )
            })?;
        Self::new(times, axes, values)
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(CoreError::Config(format!("{name} axis is empty")));
    }
    for v in axis {
        if !v.is_finite() {
            return Err(CoreError::NonFinite(format!("{name} axis node")));
        }
    }
    if axis.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoreError::Config(format!("{name} axis must be strictly increasing")));
    }
    Ok(())
}

/// Segment index and fractional position of `v` on `axis`. Exact nodes give
/// a fraction of exactly 0 (or 1 at the upper end), which the interpolation
/// weights turn into an exact lookup.
fn locate(axis: &[f64], v: f64, clamp: bool, clamped: &mut bool) -> Result<(usize, f64)> {
    let n = axis.len();
    let lo = axis[0];
    let hi = axis[n - 1];
    let v = if v < lo || v > hi {
        if !clamp {
            return Err(CoreError::Domain(format!(
                "{v} outside the grid hull [{lo}, {hi}]"
            )));
        }
        *clamped = true;
        v.clamp(lo, hi)
    } else {
        v
    };
    if n == 1 {
        return Ok((0, 0.0));
    }
    match axis.binary_search_by(|a| a.partial_cmp(&v).unwrap()) {
        Ok(i) if i == n - 1 => Ok((n - 2, 1.0)),
        Ok(i) => Ok((i, 0.0)),
        Err(i) => {
            let seg = i - 1; // v > axis[0] here, so i >= 1
            Ok((seg, (v - axis[seg]) / (axis[seg + 1] - axis[seg])))
        }
    }
}

pub(crate) fn unflatten(axes: &[Vec<f64>], mut flat: usize, x: &mut [f64]) {
    for k in (0..axes.len()).rev() {
        let n = axes[k].len();
        x[k] = axes[k][flat % n];
        flat /= n;
    }
}

fn unique_sorted(vals: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = vals.collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    v
}

fn exact_index(axis: &[f64], v: f64) -> Result<usize> {
    axis.binary_search_by(|a| a.partial_cmp(&v).unwrap())
        .map_err(|_| CoreError::Config(format!("coordinate {v} missing from reconstructed axis")))
}
