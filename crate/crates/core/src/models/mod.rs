//! Built-in models with closed-form derivatives.

mod cubic;
mod linear;
mod moments;
pub mod operators;

use std::collections::BTreeMap;

pub use cubic::{CubicMeanField, CubicParams};
pub use linear::{LinearParams, MeanFieldOUJump};
pub use moments::moment_ode_solution;
pub use operators::{operator_dmu, operator_dx, Direction, Target};

use crate::error::{Error, Result};
use crate::measure::MeasureView;
use crate::model::{MarkMeasure, MeasureDependence, Model};

pub const LINEAR_NAME: &str = "mean_field_ou_jump";
pub const CUBIC_NAME: &str = "cubic_mean_field";

/// Static dispatch over the shipped models.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinModel {
    Linear(MeanFieldOUJump),
    Cubic(CubicMeanField),
}

fn apply(
    params: &BTreeMap<String, f64>,
    model: &str,
    mut set: impl FnMut(&str, f64) -> bool,
) -> Result<()> {
    for (k, v) in params {
        if !set(k, *v) {
            return Err(Error::config(format!(
                "unknown parameter `{k}` for model `{model}`"
            )));
        }
    }
    Ok(())
}

impl BuiltinModel {
    pub fn names() -> [&'static str; 2] {
        [LINEAR_NAME, CUBIC_NAME]
    }

    /// Builds a model from its name and parameter overrides on top of the
    /// defaults.
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        match name {
            LINEAR_NAME | "linear" => {
                let mut p = LinearParams::default();
                apply(params, name, |k, v| {
                    let slot = match k {
                        "a" => &mut p.a,
                        "c" => &mut p.c,
                        "s0" => &mut p.s0,
                        "s1" => &mut p.s1,
                        "s2" => &mut p.s2,
                        "g0" => &mut p.g0,
                        "g1" => &mut p.g1,
                        "g2" => &mut p.g2,
                        "lambda" => &mut p.lambda,
                        "pbar" => &mut p.pbar,
                        _ => return false,
                    };
                    *slot = v;
                    true
                })?;
                Ok(Self::Linear(MeanFieldOUJump::new(p)?))
            }
            CUBIC_NAME | "cubic" => {
                let mut p = CubicParams::default();
                apply(params, name, |k, v| {
                    let slot = match k {
                        "beta" => &mut p.beta,
                        "c" => &mut p.c,
                        "s1" => &mut p.s1,
                        "g1" => &mut p.g1,
                        "rho" => &mut p.rho,
                        "lambda" => &mut p.lambda,
                        "pbar" => &mut p.pbar,
                        _ => return false,
                    };
                    *slot = v;
                    true
                })?;
                Ok(Self::Cubic(CubicMeanField::new(p)?))
            }
            other => Err(Error::config(format!(
                "unknown model `{other}` (expected one of {:?})",
                Self::names()
            ))),
        }
    }
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            BuiltinModel::Linear($m) => $e,
            BuiltinModel::Cubic($m) => $e,
        }
    };
}

impl Model for BuiltinModel {
    fn state_dim(&self) -> usize {
        delegate!(self, m => m.state_dim())
    }

    fn noise_dim(&self) -> usize {
        delegate!(self, m => m.noise_dim())
    }

    fn marks(&self) -> &MarkMeasure {
        delegate!(self, m => m.marks())
    }

    fn eta(&self) -> f64 {
        delegate!(self, m => m.eta())
    }

    fn pbar(&self) -> f64 {
        delegate!(self, m => m.pbar())
    }

    fn dependence(&self) -> MeasureDependence {
        delegate!(self, m => m.dependence())
    }

    fn drift<M: MeasureView>(&self, x: &[f64], mu: &M, out: &mut [f64]) {
        delegate!(self, m => m.drift(x, mu, out))
    }

    fn diffusion<M: MeasureView>(&self, x: &[f64], mu: &M, out: &mut [f64]) {
        delegate!(self, m => m.diffusion(x, mu, out))
    }

    fn jump<M: MeasureView>(&self, x: &[f64], mu: &M, z: &[f64], out: &mut [f64]) {
        delegate!(self, m => m.jump(x, mu, z, out))
    }

    fn jump_compensator<M: MeasureView>(&self, x: &[f64], mu: &M, out: &mut [f64]) {
        delegate!(self, m => m.jump_compensator(x, mu, out))
    }

    fn drift_dx<M: MeasureView>(&self, x: &[f64], mu: &M, out: &mut [f64]) {
        delegate!(self, m => m.drift_dx(x, mu, out))
    }

    fn diffusion_dx<M: MeasureView>(&self, x: &[f64], mu: &M, out: &mut [f64]) {
        delegate!(self, m => m.diffusion_dx(x, mu, out))
    }

    fn jump_dx<M: MeasureView>(&self, x: &[f64], mu: &M, z: &[f64], out: &mut [f64]) {
        delegate!(self, m => m.jump_dx(x, mu, z, out))
    }

    fn drift_dmu<M: MeasureView>(&self, x: &[f64], mu: &M, y: &[f64], out: &mut [f64]) {
        delegate!(self, m => m.drift_dmu(x, mu, y, out))
    }

    fn diffusion_dmu<M: MeasureView>(&self, x: &[f64], mu: &M, y: &[f64], out: &mut [f64]) {
        delegate!(self, m => m.diffusion_dmu(x, mu, y, out))
    }

    fn jump_dmu<M: MeasureView>(&self, x: &[f64], mu: &M, y: &[f64], z: &[f64], out: &mut [f64]) {
        delegate!(self, m => m.jump_dmu(x, mu, y, z, out))
    }
}
