//! Time grids with an attached increasing clock.
//!
//! A [`TimeGrid`] carries the window `[t0, T]`, the node times and per-step
//! clock weights `dV`. The default clock is `V_t = t`, so the weights are the
//! step sizes; [`TimeGrid::with_clock_weights`] is the hook for a general
//! non-decreasing clock.

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    dv: Vec<f64>,
    clock: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid of `n_steps` steps on `[t0, t_end]`; the last node is
    /// pinned to `t_end` exactly.
    pub fn uniform(t0: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(CoreError::Config("time grid needs at least one step".into()));
        }
        if !(t0.is_finite() && t_end.is_finite()) || t_end <= t0 {
            return Err(CoreError::Config(format!(
                "time window [{t0}, {t_end}] is not a finite increasing interval"
            )));
        }
        let dt = (t_end - t0) / n_steps as f64;
        let mut times: Vec<f64> = (0..=n_steps).map(|k| t0 + k as f64 * dt).collect();
        times[n_steps] = t_end;
        Self::from_times(times)
    }

    /// Grid from an explicit strictly increasing node sequence.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(CoreError::Config("time grid needs at least two nodes".into()));
        }
        for w in times.windows(2) {
            if !(w[0].is_finite() && w[1].is_finite()) || w[1] <= w[0] {
                return Err(CoreError::Config(format!(
                    "grid times must be finite and strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let dv: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        let clock = times.clone();
        Ok(Self { times, dv, clock })
    }

    /// Replaces the clock weights (one positive weight per step). The clock
    /// values become prefix sums anchored at `t0`. Only `V_t = t` is exercised
    /// by the shipped models; this is the hook for anything else.
    pub fn with_clock_weights(mut self, dv: Vec<f64>) -> Result<Self> {
        if dv.len() != self.n_steps() {
            return Err(CoreError::Config(format!(
                "expected {} clock weights, got {}",
                self.n_steps(),
                dv.len()
            )));
        }
        if dv.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(CoreError::Config("clock weights must be finite and positive".into()));
        }
        let mut clock = Vec::with_capacity(self.times.len());
        let mut v = self.times[0];
        clock.push(v);
        for w in &dv {
            v += w;
            clock.push(v);
        }
        self.dv = dv;
        self.clock = clock;
        Ok(self)
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    /// Step size `times[k+1] - times[k]`.
    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    /// Clock weight of step `k` (equals `dt(k)` for the default clock).
    pub fn dv(&self, k: usize) -> f64 {
        self.dv[k]
    }

    pub fn dv_weights(&self) -> &[f64] {
        &self.dv
    }

    /// Clock value at node `k` (equals `time(k)` for the default clock).
    pub fn clock_value(&self, k: usize) -> f64 {
        self.clock[k]
    }

    /// Index of a node matching `t`, or `None`. Matching is exact up to a
    /// relative rounding slack; there is no interpolation.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * (1.0 + t.abs());
        match self.times.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(k) => Some(k),
            Err(k) => {
                if k < self.times.len() && (self.times[k] - t).abs() <= tol {
                    Some(k)
                } else if k > 0 && (self.times[k - 1] - t).abs() <= tol {
                    Some(k - 1)
                } else {
                    None
                }
            }
        }
    }
}
