use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::MeasureView;
use crate::model::{MarkMeasure, MeasureDependence, Model};

/// Scalar mean-field Ornstein–Uhlenbeck dynamics with affine jumps:
///
/// ```text
/// b(x, μ)    = a x + c m(μ)
/// σ(x, μ)    = s0 + s1 x + s2 m(μ)
/// γ(x, μ, z) = (g0 + g1 x + g2 m(μ)) z
/// ```
///
/// where `m(μ)` is the mean. With `s2 = g2 = 0` the diffusion and jump
/// coefficients do not see the measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub a: f64,
    pub c: f64,
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub g0: f64,
    pub g1: f64,
    pub g2: f64,
    /// Total intensity of the symmetric `±1` mark measure.
    pub lambda: f64,
    pub pbar: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        Self {
            a: -0.5,
            c: 0.5,
            s0: 0.3,
            s1: 0.5,
            s2: 0.0,
            g0: 0.1,
            g1: 0.3,
            g2: 0.0,
            lambda: 1.0,
            pbar: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldOUJump {
    p: LinearParams,
    marks: MarkMeasure,
}

impl MeanFieldOUJump {
    pub fn new(p: LinearParams) -> Result<Self> {
        let marks = MarkMeasure::symmetric_unit(p.lambda)?;
        Self::with_marks(p, marks)
    }

    /// Uses `marks` in place of the symmetric default; `p.lambda` is
    /// ignored.
    pub fn with_marks(p: LinearParams, marks: MarkMeasure) -> Result<Self> {
        let all = [
            p.a, p.c, p.s0, p.s1, p.s2, p.g0, p.g1, p.g2, p.lambda, p.pbar,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("linear model parameters must be finite"));
        }
        if p.lambda < 0.0 {
            return Err(Error::domain("jump intensity must be nonnegative"));
        }
        if p.pbar <= 4.0 {
            return Err(Error::domain("pbar must exceed 4"));
        }
        if marks.dim() != 1 {
            return Err(Error::UnsupportedDimension(
                "linear model takes scalar marks".into(),
            ));
        }
        Ok(Self { p, marks })
    }

    pub fn params(&self) -> &LinearParams {
        &self.p
    }
}

impl Model for MeanFieldOUJump {
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
        0.0
    }

    fn pbar(&self) -> f64 {
        self.p.pbar
    }

    fn dependence(&self) -> MeasureDependence {
        MeasureDependence {
            drift: self.p.c != 0.0,
            diffusion: self.p.s2 != 0.0,
            jump: self.p.g2 != 0.0,
        }
    }

    fn drift<M: MeasureView>(&self, x: &[f64], mu: &M, out: &mut [f64]) {
        out[0] = self.p.a * x[0] + self.p.c * mu.mean(0);
    }

    fn diffusion<M: MeasureView>(&self, x: &[f64], mu: &M, out: &mut [f64]) {
        out[0] = self.p.s0 + self.p.s1 * x[0] + self.p.s2 * mu.mean(0);
    }

    fn jump<M: MeasureView>(&self, x: &[f64], mu: &M, z: &[f64], out: &mut [f64]) {
        out[0] = (self.p.g0 + self.p.g1 * x[0] + self.p.g2 * mu.mean(0)) * z[0];
    }

    fn jump_compensator<M: MeasureView>(&self, x: &[f64], mu: &M, out: &mut [f64]) {
        let first = self.marks.integrate(|z| z[0]);
        out[0] = (self.p.g0 + self.p.g1 * x[0] + self.p.g2 * mu.mean(0)) * first;
    }

    fn drift_dx<M: MeasureView>(&self, _x: &[f64], _mu: &M, out: &mut [f64]) {
        out[0] = self.p.a;
    }

    fn diffusion_dx<M: MeasureView>(&self, _x: &[f64], _mu: &M, out: &mut [f64]) {
        out[0] = self.p.s1;
    }

    fn jump_dx<M: MeasureView>(&self, _x: &[f64], _mu: &M, z: &[f64], out: &mut [f64]) {
        out[0] = self.p.g1 * z[0];
    }

    fn drift_dmu<M: MeasureView>(&self, _x: &[f64], _mu: &M, _y: &[f64], out: &mut [f64]) {
        out[0] = self.p.c;
    }

    fn diffusion_dmu<M: MeasureView>(&self, _x: &[f64], _mu: &M, _y: &[f64], out: &mut [f64]) {
        out[0] = self.p.s2;
    }

    fn jump_dmu<M: MeasureView>(
        &self,
        _x: &[f64],
        _mu: &M,
        _y: &[f64],
        z: &[f64],
        out: &mut [f64],
    ) {
        out[0] = self.p.g2 * z[0];
    }
}
