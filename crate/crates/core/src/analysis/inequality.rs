//! Second-order remainder bound for `|x|^p`.

use crate::error::{Error, Result};
use crate::quadrature::{UnitRule, DEFAULT_ORDER};

/// Panels per side of the closest point to the origin, graded towards it.
const PANELS: usize = 6;
/// Relative slack granted to quadrature and rounding.
pub const SLACK: f64 = 1e-10;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `∫_a^b g` with panels geometrically refined towards `a` when `toward_a`,
/// towards `b` otherwise.
fn graded(rule: &UnitRule, a: f64, b: f64, toward_a: bool, g: &impl Fn(f64) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mut total = 0.0;
    for k in 0..PANELS {
        // breakpoints 0, 2^-(P-1), ..., 1/2, 1 measured from the refined end
        let lo = if k == 0 {
            0.0
        } else {
            0.5f64.powi((PANELS - k) as i32)
        };
        let hi = 0.5f64.powi((PANELS - 1 - k) as i32);
        let (s, e) = if toward_a {
            (a + lo * (b - a), a + hi * (b - a))
        } else {
            (b - hi * (b - a), b - lo * (b - a))
        };
        total += (e - s) * rule.integrate(|t| g(s + t * (e - s)));
    }
    total
}

/// `(lhs, rhs)` of
/// `|x|^p − |y|^p − p|y|^{p−2} y·(x−y) ≤ p(p−1)|x−y|² ∫₀¹(1−θ)|y+θ(x−y)|^{p−2} dθ`.
pub fn pth_power_terms(x: &[f64], y: &[f64], p: f64) -> Result<(f64, f64)> {
    if !(p > 4.0) || !p.is_finite() {
        return Err(Error::domain(format!(
            "the inequality needs p > 4, got {p}"
        )));
    }
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::domain(
            "x and y must be non-empty and of equal dimension",
        ));
    }
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let ny = norm(y);
    let lhs = norm(x).powf(p)
        - ny.powf(p)
        - p * ny.powf(p - 2.0) * y.iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>();
    let dd = diff.iter().map(|a| a * a).sum::<f64>();
    if dd == 0.0 {
        return Ok((lhs, 0.0));
    }
    let g = |t: f64| {
        let z: f64 = y
            .iter()
            .zip(&diff)
            .map(|(a, b)| (a + t * b) * (a + t * b))
            .sum::<f64>();
        (1.0 - t) * z.sqrt().powf(p - 2.0)
    };
    let rule = UnitRule::new(DEFAULT_ORDER)?;
    // the integrand is least smooth where the segment passes closest to 0
    let theta = (-y.iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>() / dd).clamp(0.0, 1.0);
    let integral = graded(&rule, 0.0, theta, false, &g) + graded(&rule, theta, 1.0, true, &g);
    Ok((lhs, p * (p - 1.0) * dd * integral))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalityReport {
    pub samples: usize,
    /// Largest `(lhs − rhs) / scale`, with scale `1 + |x|^p + |y|^p + rhs`.
    pub max_violation: f64,
    /// Samples with `lhs − rhs > SLACK · scale`.
    pub violations: usize,
}

/// Checks every `(x, y, p)` sample.
pub fn pth_power_inequality_check(
    samples: &[(Vec<f64>, Vec<f64>, f64)],
) -> Result<InequalityReport> {
    let mut report = InequalityReport {
        samples: samples.len(),
        max_violation: f64::NEG_INFINITY,
        violations: 0,
    };
    for (x, y, p) in samples {
        let (lhs, rhs) = pth_power_terms(x, y, *p)?;
        let scale = 1.0 + norm(x).powf(*p) + norm(y).powf(*p) + rhs.abs();
        let v = (lhs - rhs) / scale;
        report.max_violation = report.max_violation.max(v);
        if v > SLACK {
            report.violations += 1;
        }
    }
    Ok(report)
}
