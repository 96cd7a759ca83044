use super::MeanFieldOUJump;
use crate::error::{Error, Result};

/// `(e^x − 1) / x`, continuous at 0.
fn exprel(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 + x / 2.0
    } else {
        x.exp_m1() / x
    }
}

/// `∫₀ᵗ e^{A(t−s)} e^{βs} ds`.
fn convolve(beta: f64, a: f64, t: f64) -> f64 {
    (a * t).exp() * t * exprel((beta - a) * t)
}

/// Mean and second moment of the mean-field limit of the linear model at
/// time `t`, started from a law with mean `m0` and second moment `q0`.
///
/// The mean solves `m' = (a + c) m`; the second moment solves
/// `q' = A q + β₀ + β₁ m + β₂ m²` with `A = 2a + s1² + Λ₂ g1²` and
/// `Λ₂ = Σ λ_j z_j²`.
pub fn moment_ode_solution(
    model: &MeanFieldOUJump,
    m0: f64,
    q0: f64,
    t: f64,
) -> Result<(f64, f64)> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("time must be nonnegative, got {t}")));
    }
    let p = model.params();
    let lam2 = crate::model::Model::marks(model).integrate(|z| z[0] * z[0]);
    let kappa = p.a + p.c;
    let a = 2.0 * p.a + p.s1 * p.s1 + lam2 * p.g1 * p.g1;
    let b0 = p.s0 * p.s0 + lam2 * p.g0 * p.g0;
    let b1 = 2.0 * p.s0 * (p.s1 + p.s2) + 2.0 * lam2 * p.g0 * (p.g1 + p.g2);
    let b2 = 2.0 * p.c + p.s2 * p.s2 + 2.0 * p.s1 * p.s2 + lam2 * (p.g2 * p.g2 + 2.0 * p.g1 * p.g2);

    let mean = m0 * (kappa * t).exp();
    let q = q0 * (a * t).exp()
        + b0 * convolve(0.0, a, t)
        + b1 * m0 * convolve(kappa, a, t)
        + b2 * m0 * m0 * convolve(2.0 * kappa, a, t);
    Ok((mean, q))
}
