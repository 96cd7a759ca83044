//! Uniform time grids on `[0, T]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform partition of `[0, horizon]` into `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    horizon: f64,
    steps: usize,
}

impl Grid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::domain(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::domain("step count must be positive"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_k = k T / n`. Computed by a single multiply and divide so that
    /// `point(n) == T` and points of nested grids coincide bit-for-bit.
    pub fn point(&self, k: usize) -> f64 {
        debug_assert!(k <= self.steps);
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.point(k))
    }

    /// Index `k` of the interval `[t_k, t_{k+1})` containing `t`, with the
    /// last interval closed on the right.
    pub fn interval_index(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::domain(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        let mut k = ((t / self.horizon) * self.steps as f64).floor() as usize;
        k = k.min(self.steps - 1);
        // correct for rounding in the floor above
        while k > 0 && self.point(k) > t {
            k -= 1;
        }
        while k + 1 < self.steps && self.point(k + 1) <= t {
            k += 1;
        }
        Ok(k)
    }

    /// The grid anchor of `t`: the largest grid point `t_k <= t`, mapping the
    /// right endpoint to `t_{n-1}` so every queried time has an open-interval
    /// anchor.
    pub fn kappa(&self, t: f64) -> Result<f64> {
        Ok(self.point(self.interval_index(t)?))
    }

    /// Whether `other` refines this grid by an integer factor.
    pub fn divides(&self, other: &Grid) -> bool {
        self.horizon == other.horizon && other.steps.is_multiple_of(self.steps)
    }
}
