//! The directional operators `𝔇ₓ` and `𝔇_μ` applied to model coefficients.

use crate::error::{Error, Result};
use crate::measure::MeasureView;
use crate::model::Model;

/// Coefficient being differentiated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target<'a> {
    Drift,
    Diffusion,
    /// `γ(·, ·, z̄)` for a fixed mark.
    Jump(&'a [f64]),
}

/// Direction of differentiation: a diffusion column `σ^{ℓ₁}` or a jump
/// `γ(·, ·, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Direction<'a> {
    Diffusion(usize),
    Jump(&'a [f64]),
}

fn check<T: Model>(model: &T, target: Target<'_>, dir: Direction<'_>) -> Result<()> {
    let zdim = model.marks().dim();
    match dir {
        Direction::Diffusion(l) if l >= model.noise_dim() => {
            return Err(Error::domain(format!(
                "direction sigma^{l} out of range for m = {}",
                model.noise_dim()
            )))
        }
        Direction::Jump(z) if z.len() != zdim => {
            return Err(Error::domain("direction mark has the wrong dimension"))
        }
        _ => {}
    }
    if let Target::Jump(z) = target {
        if z.len() != zdim {
            return Err(Error::domain("target mark has the wrong dimension"));
        }
    }
    Ok(())
}

fn target_len<T: Model>(model: &T, target: Target<'_>) -> usize {
    match target {
        Target::Diffusion => model.state_dim() * model.noise_dim(),
        _ => model.state_dim(),
    }
}

/// The vector `σ^{ℓ₁}(p, μ)` or `γ(p, μ, z)`.
fn direction_vector<T: Model, M: MeasureView>(
    model: &T,
    dir: Direction<'_>,
    p: &[f64],
    mu: &M,
) -> Vec<f64> {
    let (d, m) = (model.state_dim(), model.noise_dim());
    match dir {
        Direction::Diffusion(l1) => {
            let mut s = vec![0.0; d * m];
            model.diffusion(p, mu, &mut s);
            (0..d).map(|v| s[v * m + l1]).collect()
        }
        Direction::Jump(z) => {
            let mut g = vec![0.0; d];
            model.jump(p, mu, z, &mut g);
            g
        }
    }
}

fn contract(jac: &[f64], dirv: &[f64], rows: usize) -> Vec<f64> {
    let d = dirv.len();
    (0..rows)
        .map(|r| (0..d).map(|v| jac[r * d + v] * dirv[v]).sum())
        .collect()
}

/// `𝔇ₓ^{dir} f(x, μ) = ∂ₓf(x, μ) · dir(x, μ)`; shape `d` for drift and
/// jump targets, `d×m` for the diffusion.
pub fn operator_dx<T: Model, M: MeasureView>(
    model: &T,
    target: Target<'_>,
    dir: Direction<'_>,
    x: &[f64],
    mu: &M,
) -> Result<Vec<f64>> {
    check(model, target, dir)?;
    let d = model.state_dim();
    let rows = target_len(model, target);
    let mut jac = vec![0.0; rows * d];
    match target {
        Target::Drift => model.drift_dx(x, mu, &mut jac),
        Target::Diffusion => model.diffusion_dx(x, mu, &mut jac),
        Target::Jump(z) => model.jump_dx(x, mu, z, &mut jac),
    }
    Ok(contract(&jac, &direction_vector(model, dir, x, mu), rows))
}

/// `𝔇_μ^{dir} f(x, μ, y) = ∂_μf(x, μ, y) · dir(y, μ)`.
pub fn operator_dmu<T: Model, M: MeasureView>(
    model: &T,
    target: Target<'_>,
    dir: Direction<'_>,
    x: &[f64],
    mu: &M,
    y: &[f64],
) -> Result<Vec<f64>> {
    check(model, target, dir)?;
    let d = model.state_dim();
    let rows = target_len(model, target);
    let mut jac = vec![0.0; rows * d];
    match target {
        Target::Drift => model.drift_dmu(x, mu, y, &mut jac),
        Target::Diffusion => model.diffusion_dmu(x, mu, y, &mut jac),
        Target::Jump(z) => model.jump_dmu(x, mu, y, z, &mut jac),
    }
    Ok(contract(&jac, &direction_vector(model, dir, y, mu), rows))
}

/// All `𝔇^{σ^{ℓ₁}} σ^{uℓ}` at once from a derivative tensor `jac`
/// (layout `(u*m + ℓ)*d + v`) and the diffusion matrix `sig` at the
/// multiplier point. Writes `out[(ℓ₁*d + u)*m + ℓ]`.
pub fn contract_sigma_sigma(jac: &[f64], sig: &[f64], d: usize, m: usize, out: &mut [f64]) {
    for l1 in 0..m {
        for u in 0..d {
            for l in 0..m {
                let row = &jac[(u * m + l) * d..(u * m + l + 1) * d];
                let mut acc = 0.0;
                for (v, j) in row.iter().enumerate() {
                    acc += j * sig[v * m + l1];
                }
                out[(l1 * d + u) * m + l] = acc;
            }
        }
    }
}

/// All `𝔇^{σ^{ℓ₁}} γ^u` from a jump derivative `jac` (layout `u*d + v`).
/// Writes `out[ℓ₁*d + u]`.
pub fn contract_sigma_gamma(jac: &[f64], sig: &[f64], d: usize, m: usize, out: &mut [f64]) {
    for l1 in 0..m {
        for u in 0..d {
            let row = &jac[u * d..(u + 1) * d];
            let mut acc = 0.0;
            for (v, j) in row.iter().enumerate() {
                acc += j * sig[v * m + l1];
            }
            out[l1 * d + u] = acc;
        }
    }
}
