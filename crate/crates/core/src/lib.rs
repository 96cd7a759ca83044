//! Tamed Milstein-type simulation of interacting particle systems for
//! McKean–Vlasov SDEs driven by Brownian motion and a finite-activity
//! Poisson random measure.

pub mod analysis;
pub mod config;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod measure;
pub mod model;
pub mod models;
pub mod noise;
pub mod output;
pub mod quadrature;
pub mod schemes;
pub mod seed;
pub mod taming;

pub use error::{Error, Result};
pub use grid::Grid;
pub use measure::{EmpiricalMeasure, MeasureView, ShiftedMeasure};
pub use model::{MarkMeasure, MeasureDependence, Model};
