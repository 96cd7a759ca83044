//! The coefficient interface for McKean–Vlasov models with jumps.
//!
//! Array layouts (all row-major):
//!
//! | method             | shape     | index                  |
//! |--------------------|-----------|------------------------|
//! | `drift`            | d         | `u`                    |
//! | `diffusion`        | d×m       | `u*m + l`              |
//! | `jump`             | d         | `u`                    |
//! | `drift_dx`         | d×d       | `u*d + v`              |
//! | `diffusion_dx`     | d×m×d     | `(u*m + l)*d + v`      |
//! | `jump_dx`          | d×d       | `u*d + v`              |
//! | `drift_dmu`        | d×d       | `u*d + v`              |
//! | `diffusion_dmu`    | d×m×d     | `(u*m + l)*d + v`      |
//! | `jump_dmu`         | d×d       | `u*d + v`              |
//!
//! `v` always indexes the differentiation direction; for the Lions
//! derivatives it is a component of the atom location `y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, MeasureView};

/// A finite discrete jump-size measure `ν = Σ λ_j δ_{z_j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkMeasure {
    dim: usize,
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl MarkMeasure {
    /// `atoms` holds `weights.len()` marks of dimension `dim`, row-major.
    pub fn new(atoms: Vec<f64>, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("mark dimension must be positive"));
        }
        if atoms.len() != dim * weights.len() {
            return Err(Error::domain(format!(
                "{} mark values for {} weights of dimension {dim}",
                atoms.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::domain("mark weights must be positive and finite"));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::domain("mark atoms must be finite"));
        }
        Ok(Self {
            dim,
            atoms,
            weights,
        })
    }

    /// The measure with no atoms: no jumps at all.
    pub fn none(dim: usize) -> Self {
        Self {
            dim: dim.max(1),
            atoms: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Marks `±1` with weight `λ/2` each; empty when `λ = 0`.
    pub fn symmetric_unit(lambda: f64) -> Result<Self> {
        if lambda == 0.0 {
            return Ok(Self::none(1));
        }
        Self::new(vec![1.0, -1.0], 1, vec![lambda / 2.0, lambda / 2.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        &self.atoms[j * self.dim..(j + 1) * self.dim]
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `λ = ν(Z)`.
    pub fn total_intensity(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Mark-sampling probabilities `λ_j / λ`.
    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total_intensity();
        self.weights.iter().map(|w| w / total).collect()
    }

    /// `Σ_j λ_j g(z_j)`.
    pub fn integrate(&self, mut g: impl FnMut(&[f64]) -> f64) -> f64 {
        (0..self.len())
            .map(|j| self.weights[j] * g(self.atom(j)))
            .sum()
    }
}

/// Which coefficients read the measure argument at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MeasureDependence {
    pub drift: bool,
    pub diffusion: bool,
    pub jump: bool,
}

impl MeasureDependence {
    pub const NONE: Self = Self {
        drift: false,
        diffusion: false,
        jump: false,
    };

    pub fn any(&self) -> bool {
        self.drift || self.diffusion || self.jump
    }
}

/// Coefficients and derivatives of a McKean–Vlasov SDE with jumps.
///
/// Every method writes into a caller-provided slice of the documented
/// shape. Implementations must be pure functions of their arguments.
pub trait Model: Send + Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn marks(&self) -> &MarkMeasure;
    /// Polynomial growth exponent of the state Lipschitz bound.
    fn eta(&self) -> f64;
    /// Moment order used by the jump taming exponent.
    fn pbar(&self) -> f64;
    fn dependence(&self) -> MeasureDependence;

    fn drift<M: MeasureView>(&self, x: &[f64], mu: &M, out: &mut [f64]);
    fn diffusion<M: MeasureView>(&self, x: &[f64], mu: &M, out: &mut [f64]);
    fn jump<M: MeasureView>(&self, x: &[f64], mu: &M, z: &[f64], out: &mut [f64]);

    /// `∫ γ(x, μ, z) ν(dz)`.
    fn jump_compensator<M: MeasureView>(&self, x: &[f64], mu: &M, out: &mut [f64]) {
        jump_atom_sum(self, x, mu, out);
    }

    fn drift_dx<M: MeasureView>(&self, x: &[f64], mu: &M, out: &mut [f64]);
    fn diffusion_dx<M: MeasureView>(&self, x: &[f64], mu: &M, out: &mut [f64]);
    fn jump_dx<M: MeasureView>(&self, x: &[f64], mu: &M, z: &[f64], out: &mut [f64]);

    fn drift_dmu<M: MeasureView>(&self, x: &[f64], mu: &M, y: &[f64], out: &mut [f64]);
    fn diffusion_dmu<M: MeasureView>(&self, x: &[f64], mu: &M, y: &[f64], out: &mut [f64]);
    fn jump_dmu<M: MeasureView>(&self, x: &[f64], mu: &M, y: &[f64], z: &[f64], out: &mut [f64]);
}

/// `Σ_j λ_j γ(x, μ, z_j)` by direct summation over the mark atoms.
pub fn jump_atom_sum<T: Model + ?Sized, M: MeasureView>(
    model: &T,
    x: &[f64],
    mu: &M,
    out: &mut [f64],
) {
    let marks = model.marks();
    let mut tmp = vec![0.0; out.len()];
    out.fill(0.0);
    for j in 0..marks.len() {
        model.jump(x, mu, marks.atom(j), &mut tmp);
        let w = marks.weight(j);
        out.iter_mut().zip(&tmp).for_each(|(o, g)| *o += w * g);
    }
}

/// One probe location for [`validate_model`]: a state, the atoms of an
/// empirical measure, and a mark.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePoint {
    pub x: Vec<f64>,
    pub atoms: Vec<f64>,
    pub z: Vec<f64>,
}

/// One compared quantity at one probe point.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationEntry {
    pub quantity: &'static str,
    pub point: usize,
    pub discrepancy: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub tolerance: f64,
    pub perturbation: f64,
    pub entries: Vec<ValidationEntry>,
    /// Set when some coefficient evaluated to a non-finite value.
    pub fatal: Option<String>,
}

impl ValidationReport {
    pub fn max_discrepancy(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.discrepancy)
            .fold(0.0, f64::max)
    }

    pub fn max_for(&self, quantity: &str) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.quantity == quantity)
            .map(|e| e.discrepancy)
            .fold(0.0, f64::max)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &ValidationEntry> {
        self.entries.iter().filter(|e| e.flagged)
    }

    pub fn passed(&self) -> bool {
        self.fatal.is_none() && self.flagged().next().is_none()
    }
}

pub const VALIDATION_PERTURBATION: f64 = 1e-5;
pub const VALIDATION_TOLERANCE: f64 = 1e-6;

/// Compares analytic derivatives against central differences and the
/// compensator against the atom sum at every probe point.
pub fn validate_model<T: Model>(model: &T, points: &[ProbePoint]) -> Result<ValidationReport> {
    validate_model_with(model, points, VALIDATION_PERTURBATION, VALIDATION_TOLERANCE)
}

pub fn validate_model_with<T: Model>(
    model: &T,
    points: &[ProbePoint],
    eps: f64,
    tol: f64,
) -> Result<ValidationReport> {
    let d = model.state_dim();
    let m = model.noise_dim();
    let mut report = ValidationReport {
        tolerance: tol,
        perturbation: eps,
        entries: Vec::new(),
        fatal: None,
    };

    for (p, pt) in points.iter().enumerate() {
        if pt.x.len() != d || pt.atoms.len() % d != 0 || pt.atoms.is_empty() {
            return Err(Error::domain(format!(
                "probe point {p} has the wrong shape"
            )));
        }
        if pt.z.len() != model.marks().dim() {
            return Err(Error::domain(format!(
                "probe point {p} mark has the wrong dimension"
            )));
        }
        if pt
            .x
            .iter()
            .chain(&pt.atoms)
            .chain(&pt.z)
            .any(|v| !v.is_finite())
        {
            return Err(Error::domain(format!("probe point {p} is not finite")));
        }
        let mu = EmpiricalMeasure::new(&pt.atoms[..], d)?;
        let n_atoms = mu.len();

        let mut entry = |quantity: &'static str, analytic: &[f64], numeric: &[f64]| {
            let disc = analytic
                .iter()
                .zip(numeric)
                .map(|(a, f)| (a - f).abs() / (1.0 + a.abs()))
                .fold(0.0, f64::max);
            report.entries.push(ValidationEntry {
                quantity,
                point: p,
                discrepancy: disc,
                flagged: !(disc <= tol),
            });
        };

        // values
        let mut b = vec![0.0; d];
        let mut s = vec![0.0; d * m];
        let mut g = vec![0.0; d];
        let mut gnu = vec![0.0; d];
        model.drift(&pt.x, &mu, &mut b);
        model.diffusion(&pt.x, &mu, &mut s);
        model.jump(&pt.x, &mu, &pt.z, &mut g);
        model.jump_compensator(&pt.x, &mu, &mut gnu);
        if b.iter()
            .chain(&s)
            .chain(&g)
            .chain(&gnu)
            .any(|v| !v.is_finite())
        {
            report.fatal = Some(format!("non-finite coefficient at probe point {p}"));
            return Ok(report);
        }
        let mut direct = vec![0.0; d];
        jump_atom_sum(model, &pt.x, &mu, &mut direct);
        entry("gamma_nu", &gnu, &direct);

        // state derivatives
        let mut ab = vec![0.0; d * d];
        let mut as_ = vec![0.0; d * m * d];
        let mut ag = vec![0.0; d * d];
        model.drift_dx(&pt.x, &mu, &mut ab);
        model.diffusion_dx(&pt.x, &mu, &mut as_);
        model.jump_dx(&pt.x, &mu, &pt.z, &mut ag);
        let (mut fb, mut fs, mut fg) = (vec![0.0; d * d], vec![0.0; d * m * d], vec![0.0; d * d]);
        let (mut bp, mut bm) = (vec![0.0; d * m], vec![0.0; d * m]);
        let mut xp = pt.x.clone();
        for v in 0..d {
            xp[v] = pt.x[v] + eps;
            let xplus = xp.clone();
            xp[v] = pt.x[v] - eps;
            let xminus = xp.clone();
            xp[v] = pt.x[v];

            model.drift(&xplus, &mu, &mut bp[..d]);
            model.drift(&xminus, &mu, &mut bm[..d]);
            for u in 0..d {
                fb[u * d + v] = (bp[u] - bm[u]) / (2.0 * eps);
            }
            model.diffusion(&xplus, &mu, &mut bp);
            model.diffusion(&xminus, &mu, &mut bm);
            for ul in 0..d * m {
                fs[ul * d + v] = (bp[ul] - bm[ul]) / (2.0 * eps);
            }
            model.jump(&xplus, &mu, &pt.z, &mut bp[..d]);
            model.jump(&xminus, &mu, &pt.z, &mut bm[..d]);
            for u in 0..d {
                fg[u * d + v] = (bp[u] - bm[u]) / (2.0 * eps);
            }
        }
        entry("dx_b", &ab, &fb);
        entry("dx_sigma", &as_, &fs);
        entry("dx_gamma", &ag, &fg);

        // Lions derivatives at every atom
        let mut shifted = pt.atoms.clone();
        let scale = n_atoms as f64 / (2.0 * eps);
        for j in 0..n_atoms {
            let y = pt.atoms[j * d..(j + 1) * d].to_vec();
            model.drift_dmu(&pt.x, &mu, &y, &mut ab);
            model.diffusion_dmu(&pt.x, &mu, &y, &mut as_);
            model.jump_dmu(&pt.x, &mu, &y, &pt.z, &mut ag);
            for v in 0..d {
                let k = j * d + v;
                shifted[k] = pt.atoms[k] + eps;
                let plus = EmpiricalMeasure::new_unchecked(shifted.clone(), d);
                shifted[k] = pt.atoms[k] - eps;
                let minus = EmpiricalMeasure::new_unchecked(shifted.clone(), d);
                shifted[k] = pt.atoms[k];

                model.drift(&pt.x, &plus, &mut bp[..d]);
                model.drift(&pt.x, &minus, &mut bm[..d]);
                for u in 0..d {
                    fb[u * d + v] = (bp[u] - bm[u]) * scale;
                }
                model.diffusion(&pt.x, &plus, &mut bp);
                model.diffusion(&pt.x, &minus, &mut bm);
                for ul in 0..d * m {
                    fs[ul * d + v] = (bp[ul] - bm[ul]) * scale;
                }
                model.jump(&pt.x, &plus, &pt.z, &mut bp[..d]);
                model.jump(&pt.x, &minus, &pt.z, &mut bm[..d]);
                for u in 0..d {
                    fg[u * d + v] = (bp[u] - bm[u]) * scale;
                }
            }
            entry("dmu_b", &ab, &fb);
            entry("dmu_sigma", &as_, &fs);
            entry("dmu_gamma", &ag, &fg);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mark_measure_basics() {
        let nu = MarkMeasure::symmetric_unit(2.0).unwrap();
        assert_eq!(nu.len(), 2);
        assert_eq!(nu.total_intensity(), 2.0);
        assert_eq!(nu.probabilities(), vec![0.5, 0.5]);
        assert_eq!(nu.integrate(|z| z[0]), 0.0);
        assert_eq!(nu.integrate(|z| z[0] * z[0]), 2.0);
        assert!(MarkMeasure::symmetric_unit(0.0).unwrap().is_empty());
        assert!(MarkMeasure::new(vec![1.0], 1, vec![0.0]).is_err());
        assert!(MarkMeasure::new(vec![1.0, 2.0], 1, vec![1.0]).is_err());
    }
}
