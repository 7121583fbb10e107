//! The grid-valued pair `(u, v)` and its node set.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{CoreError, Result};
use crate::operators::grid_function::unflatten;
use crate::operators::GridFunction;

/// How a pair was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    FromBsde,
    FromFixedPoint,
}

/// Node set shared by `u` and every component of `v`: a time axis plus one
/// space axis per state dimension (the space nodes are their product).
#[derive(Debug, Clone)]
pub struct SpaceTimeNodes {
    times: Vec<f64>,
    axes: Vec<Vec<f64>>,
}

impl SpaceTimeNodes {
    pub fn new(times: Vec<f64>, axes: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() < 2 {
            return Err(CoreError::Config(
                "node set needs at least one interior time and the terminal time".into(),
            ));
        }
        // Reuse the grid-function validation of axis monotonicity.
        let probe = GridFunction::from_fn(times.clone(), axes.clone(), |_, _| 0.0)?;
        let _ = probe;
        Ok(Self { times, axes })
    }

    /// Default desk-scale node set: 11 uniform times on `[t0, t_end]` and 41
    /// space nodes per axis on `center ± 5·sqrt(t_end − t0)`.
    pub fn default_for(t0: f64, t_end: f64, center: &[f64]) -> Result<Self> {
        if !(t_end > t0) {
            return Err(CoreError::Config(format!(
                "terminal time {t_end} must exceed start time {t0}"
            )));
        }
        let radius = 5.0 * (t_end - t0).sqrt();
        let times = (0..11)
            .map(|k| t0 + (t_end - t0) * k as f64 / 10.0)
            .collect();
        let axes = center
            .iter()
            .map(|&c| (0..41).map(|m| c - radius + 2.0 * radius * m as f64 / 40.0).collect())
            .collect();
        Self::new(times, axes)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn terminal_time(&self) -> f64 {
        *self.times.last().expect("validated non-empty")
    }

    pub fn n_space(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    /// Space node for a row-major flat index, matching the grid-function
    /// value layout.
    pub fn space_node(&self, flat: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.axes.len()];
        unflatten(&self.axes, flat, &mut x);
        x
    }
}

/// Value function `u` and flux components `v_i` on a shared node set.
#[derive(Debug, Clone)]
pub struct MildSolutionPair {
    pub provenance: Provenance,
    pub u: GridFunction,
    pub v: Vec<GridFunction>,
}

impl MildSolutionPair {
    pub fn new(provenance: Provenance, u: GridFunction, v: Vec<GridFunction>) -> Result<Self> {
        if v.is_empty() {
            return Err(CoreError::Config("pair needs at least one flux component".into()));
        }
        for (i, vi) in v.iter().enumerate() {
            if vi.times() != u.times() || vi.axes() != u.axes() {
                return Err(CoreError::Config(format!(
                    "flux component {i} lives on a different node set than u"
                )));
            }
        }
        Ok(Self { provenance, u, v })
    }

    pub fn dim(&self) -> usize {
        self.u.dim()
    }

    pub fn d_flux(&self) -> usize {
        self.v.len()
    }

    /// Checks that the terminal row of `u` equals `g` at every node, bit for
    /// bit; constructions fill that row directly from `g`, so any mismatch
    /// means the pair was tampered with.
    pub fn verify_terminal(&self, g: impl Fn(&[f64]) -> f64) -> Result<()> {
        let times = self.u.times();
        let ti = times.len() - 1;
        let t_end = times[ti];
        let n_space: usize = self.u.axes().iter().map(Vec::len).product();
        let mut x = vec![0.0; self.u.dim()];
        for flat in 0..n_space {
            unflatten(self.u.axes(), flat, &mut x);
            let stored = self.u.values()[ti * n_space + flat];
            let expected = g(&x);
            if stored != expected {
                return Err(CoreError::Config(format!(
                    "terminal value at t={t_end}, x={x:?} is {stored}, terminal condition gives {expected}"
                )));
            }
        }
        Ok(())
    }

    /// Interpolated `u`, clamping out-of-hull points; the flag reports
    /// whether a clamp happened.
    pub fn u_clamped(&self, t: f64, x: &[f64]) -> Result<(f64, bool)> {
        self.u.eval_clamped(t, x)
    }

    /// Interpolated flux vector with a shared clamp flag.
    pub fn v_clamped(&self, t: f64, x: &[f64]) -> Result<(Vec<f64>, bool)> {
        let mut out = Vec::with_capacity(self.v.len());
        let mut clamped = false;
        for vi in &self.v {
            let (val, c) = vi.eval_clamped(t, x)?;
            out.push(val);
            clamped |= c;
        }
        Ok((out, clamped))
    }

    /// CSV export, one row per node: `s, x_1..x_d, u, v_1..v_d`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let dim = self.dim();
        let mut header = vec!["s".to_string()];
        header.extend((1..=dim).map(|k| format!("x_{k}")));
        header.push("u".to_string());
        header.extend((1..=self.v.len()).map(|k| format!("v_{k}")));
        out.write_record(&header)?;
        let n_space: usize = self.u.axes().iter().map(Vec::len).product();
        let mut x = vec![0.0; dim];
        for (ti, &t) in self.u.times().iter().enumerate() {
            for flat in 0..n_space {
                unflatten(self.u.axes(), flat, &mut x);
                let mut row = vec![format!("{t}")];
                row.extend(x.iter().map(|c| format!("{c}")));
                row.push(format!("{}", self.u.values()[ti * n_space + flat]));
                for vi in &self.v {
                    row.push(format!("{}", vi.values()[ti * n_space + flat]));
                }
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut file)?;
        file.flush()?;
        Ok(())
    }
}
