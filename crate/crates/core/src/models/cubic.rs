use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::MeasureView;
use crate::model::{MarkMeasure, MeasureDependence, Model};

/// Scalar model with a cubic restoring drift:
///
/// ```text
/// b(x, μ)    = x − β x³ + c m(μ)
/// σ(x, μ)    = s1 x
/// γ(x, μ, z) = g1 x (1 + ρ |x|^{1/2}) z
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicParams {
    pub beta: f64,
    pub c: f64,
    pub s1: f64,
    pub g1: f64,
    pub rho: f64,
    pub lambda: f64,
    pub pbar: f64,
}

impl Default for CubicParams {
    fn default() -> Self {
        Self {
            beta: 1.0,
            c: 0.5,
            s1: 0.5,
            g1: 0.3,
            rho: 0.0,
            lambda: 1.0,
            pbar: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubicMeanField {
    p: CubicParams,
    marks: MarkMeasure,
}

impl CubicMeanField {
    pub fn new(p: CubicParams) -> Result<Self> {
        let all = [p.beta, p.c, p.s1, p.g1, p.rho, p.lambda, p.pbar];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("cubic model parameters must be finite"));
        }
        if p.beta <= 0.0 {
            return Err(Error::domain("beta must be positive"));
        }
        if p.rho < 0.0 || p.lambda < 0.0 {
            return Err(Error::domain("rho and lambda must be nonnegative"));
        }
        if p.pbar <= 4.0 {
            return Err(Error::domain("pbar must exceed 4"));
        }
        let marks = MarkMeasure::symmetric_unit(p.lambda)?;
        Ok(Self { p, marks })
    }

    pub fn params(&self) -> &CubicParams {
        &self.p
    }
}

impl Model for CubicMeanField {
    fn state_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn marks(&self) -> &MarkMeasure {
        &self.marks
    }

    fn eta(&self) -> f64 {
        2.0
    }

    fn pbar(&self) -> f64 {
        self.p.pbar
    }

    fn dependence(&self) -> MeasureDependence {
        MeasureDependence {
            drift: self.p.c != 0.0,
            diffusion: false,
            jump: false,
        }
    }

    fn drift<M: MeasureView>(&self, x: &[f64], mu: &M, out: &mut [f64]) {
        let x = x[0];
        out[0] = x - self.p.beta * x * x * x + self.p.c * mu.mean(0);
    }

    fn diffusion<M: MeasureView>(&self, x: &[f64], _mu: &M, out: &mut [f64]) {
        out[0] = self.p.s1 * x[0];
    }

    fn jump<M: MeasureView>(&self, x: &[f64], _mu: &M, z: &[f64], out: &mut [f64]) {
        let x = x[0];
        out[0] = self.p.g1 * x * (1.0 + self.p.rho * x.abs().sqrt()) * z[0];
    }

    fn drift_dx<M: MeasureView>(&self, x: &[f64], _mu: &M, out: &mut [f64]) {
        out[0] = 1.0 - 3.0 * self.p.beta * x[0] * x[0];
    }

    fn diffusion_dx<M: MeasureView>(&self, _x: &[f64], _mu: &M, out: &mut [f64]) {
        out[0] = self.p.s1;
    }

    fn jump_dx<M: MeasureView>(&self, x: &[f64], _mu: &M, z: &[f64], out: &mut [f64]) {
        out[0] = self.p.g1 * (1.0 + 1.5 * self.p.rho * x[0].abs().sqrt()) * z[0];
    }

    fn drift_dmu<M: MeasureView>(&self, _x: &[f64], _mu: &M, _y: &[f64], out: &mut [f64]) {
        out[0] = self.p.c;
    }

    fn diffusion_dmu<M: MeasureView>(&self, _x: &[f64], _mu: &M, _y: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn jump_dmu<M: MeasureView>(
        &self,
        _x: &[f64],
        _mu: &M,
        _y: &[f64],
        _z: &[f64],
        out: &mut [f64],
    ) {
        out[0] = 0.0;
    }
}
