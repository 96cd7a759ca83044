//! Run-level settings shared by the simulators and experiments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Euler,
    Milstein,
}

impl SchemeKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Euler => "euler",
            SchemeKind::Milstein => "milstein",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TamingMode {
    On,
    Off,
}

/// Independent Gaussian initial condition per component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialLaw {
    pub mean: f64,
    pub sd: f64,
}

impl InitialLaw {
    pub fn point(x: f64) -> Self {
        Self { mean: x, sd: 0.0 }
    }

    /// `(E x, E x²)` for one component.
    pub fn moments(&self) -> (f64, f64) {
        (self.mean, self.mean * self.mean + self.sd * self.sd)
    }
}

impl Default for InitialLaw {
    fn default() -> Self {
        Self { mean: 1.0, sd: 0.5 }
    }
}

pub const DEFAULT_SUBSTEPS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub particles: usize,
    pub runs: usize,
    pub seed: u64,
    pub grid: Grid,
    pub threads: usize,
    pub scheme: SchemeKind,
    pub taming: TamingMode,
    /// Substeps per step for off-diagonal and cross-particle iterated
    /// integrals.
    pub substeps: usize,
    pub initial: InitialLaw,
}

impl RunConfig {
    pub fn new(particles: usize, runs: usize, seed: u64, grid: Grid) -> Self {
        Self {
            particles,
            runs,
            seed,
            grid,
            threads: 1,
            scheme: SchemeKind::Milstein,
            taming: TamingMode::On,
            substeps: DEFAULT_SUBSTEPS,
            initial: InitialLaw::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.runs == 0 {
            return Err(Error::config("particles and runs must be at least 1"));
        }
        if self.substeps == 0 || !self.substeps.is_power_of_two() {
            return Err(Error::config("substeps must be a positive power of two"));
        }
        if !(self.initial.mean.is_finite() && self.initial.sd.is_finite() && self.initial.sd >= 0.0)
        {
            return Err(Error::config(
                "initial law must have finite mean and sd >= 0",
            ));
        }
        Ok(())
    }
}
