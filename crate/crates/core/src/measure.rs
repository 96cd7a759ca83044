//! Empirical measures over particle positions.
//!
//! Coefficients only ever see a measure through [`MeasureView`]. The
//! empirical measure caches its mean and second moment once; a
//! [`ShiftedMeasure`] moves a single atom and answers the same queries in
//! O(1) from the cached base values, which keeps the per-jump coefficient
//! evaluations of the Milstein corrections cheap.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::quadrature::UnitRule;

/// Read access to a uniform atomic measure `(1/N) Σ δ_{x^j}` on `R^d`.
pub trait MeasureView {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    /// Writes atom `j` into `out` (length `dim`).
    fn atom(&self, j: usize, out: &mut [f64]);
    /// Component `u` of the mean.
    fn mean(&self, u: usize) -> f64;
    /// `(1/N) Σ |x^j|²`.
    fn second_moment(&self) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `W₂(μ, δ₀)`; closed form for any measure.
    fn w2_to_dirac0(&self) -> f64 {
        self.second_moment().max(0.0).sqrt()
    }
}

/// Uniform empirical measure over `N` atoms stored row-major (`N × d`).
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure<'a> {
    atoms: Cow<'a, [f64]>,
    dim: usize,
    mean: Vec<f64>,
    second: f64,
}

impl<'a> EmpiricalMeasure<'a> {
    pub fn new(atoms: impl Into<Cow<'a, [f64]>>, dim: usize) -> Result<Self> {
        let atoms = atoms.into();
        if dim == 0 || atoms.is_empty() || atoms.len() % dim != 0 {
            return Err(Error::domain(format!(
                "{} values do not form a non-empty set of {dim}-dimensional atoms",
                atoms.len()
            )));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("empirical measure atoms must be finite"));
        }
        Ok(Self::new_unchecked(atoms, dim))
    }

    /// Skips the finiteness check; used by steppers that track blow-ups
    /// separately.
    pub fn new_unchecked(atoms: impl Into<Cow<'a, [f64]>>, dim: usize) -> Self {
        let atoms = atoms.into();
        let n = atoms.len() / dim;
        let mut mean = vec![0.0; dim];
        let mut second = 0.0;
        for x in atoms.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
                second += v * v;
            }
        }
        let inv = 1.0 / n as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        Self {
            atoms,
            dim,
            mean,
            second: second * inv,
        }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn atom_slice(&self, j: usize) -> &[f64] {
        &self.atoms[j * self.dim..(j + 1) * self.dim]
    }

    /// The measure with atom `index` displaced by `shift`.
    pub fn shifted<'s>(&'s self, index: usize, shift: &'s [f64]) -> Result<ShiftedMeasure<'s>> {
        if index >= self.len() {
            return Err(Error::domain(format!(
                "atom index {index} out of range for {} atoms",
                self.len()
            )));
        }
        if shift.len() != self.dim {
            return Err(Error::domain("shift dimension mismatch"));
        }
        Ok(ShiftedMeasure::new_unchecked(self, index, shift))
    }
}

impl MeasureView for EmpiricalMeasure<'_> {
    fn len(&self) -> usize {
        self.atoms.len() / self.dim
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn atom(&self, j: usize, out: &mut [f64]) {
        out.copy_from_slice(self.atom_slice(j));
    }

    fn mean(&self, u: usize) -> f64 {
        self.mean[u]
    }

    fn second_moment(&self) -> f64 {
        self.second
    }
}

/// Lazy view of `(1/N) Σ_j δ_{x^j + 1{j=k} v}`; never copies the atoms.
#[derive(Debug, Clone, Copy)]
pub struct ShiftedMeasure<'a> {
    base: &'a EmpiricalMeasure<'a>,
    index: usize,
    shift: &'a [f64],
    second: f64,
}

impl<'a> ShiftedMeasure<'a> {
    pub(crate) fn new_unchecked(
        base: &'a EmpiricalMeasure<'a>,
        index: usize,
        shift: &'a [f64],
    ) -> Self {
        let x = base.atom_slice(index);
        let delta: f64 = x
            .iter()
            .zip(shift)
            .map(|(a, v)| (a + v) * (a + v) - a * a)
            .sum();
        Self {
            base,
            index,
            shift,
            second: base.second + delta / base.len() as f64,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn shift(&self) -> &[f64] {
        self.shift
    }
}

impl MeasureView for ShiftedMeasure<'_> {
    fn len(&self) -> usize {
        self.base.len()
    }

    fn dim(&self) -> usize {
        self.base.dim
    }

    fn atom(&self, j: usize, out: &mut [f64]) {
        self.base.atom(j, out);
        if j == self.index {
            out.iter_mut().zip(self.shift).for_each(|(o, v)| *o += v);
        }
    }

    fn mean(&self, u: usize) -> f64 {
        self.base.mean[u] + self.shift[u] / self.base.len() as f64
    }

    fn second_moment(&self) -> f64 {
        self.second
    }
}

/// Collects the atoms of any view into an owned `N × d` buffer.
pub fn collect_atoms<M: MeasureView + ?Sized>(mu: &M) -> Vec<f64> {
    let d = mu.dim();
    let mut out = vec![0.0; mu.len() * d];
    for (j, chunk) in out.chunks_exact_mut(d).enumerate() {
        mu.atom(j, chunk);
    }
    out
}

/// `W₂(μ, δ₀) = sqrt((1/N) Σ |x^j|²)`.
pub fn w2_to_dirac0<M: MeasureView + ?Sized>(mu: &M) -> f64 {
    mu.w2_to_dirac0()
}

/// Exact `W₂` between two one-dimensional empirical measures with the same
/// number of atoms, by matching order statistics.
pub fn w2_1d_exact<A, B>(mu: &A, nu: &B) -> Result<f64>
where
    A: MeasureView + ?Sized,
    B: MeasureView + ?Sized,
{
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::UnsupportedDimension(format!(
            "exact W2 needs d = 1, got {} and {}",
            mu.dim(),
            nu.dim()
        )));
    }
    if mu.len() != nu.len() {
        return Err(Error::domain("W2 matching needs equal atom counts"));
    }
    let mut a = collect_atoms(mu);
    let mut b = collect_atoms(nu);
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((s / a.len() as f64).sqrt())
}

/// Index-coupling upper bound `sqrt((1/N) Σ_j |x^j − y^j|²) ≥ W₂(μ, ν)`.
pub fn w2_index_bound<A, B>(mu: &A, nu: &B) -> Result<f64>
where
    A: MeasureView + ?Sized,
    B: MeasureView + ?Sized,
{
    if mu.len() != nu.len() || mu.dim() != nu.dim() {
        return Err(Error::domain(format!(
            "index coupling needs equal shapes, got {}x{} and {}x{}",
            mu.len(),
            mu.dim(),
            nu.len(),
            nu.dim()
        )));
    }
    let d = mu.dim();
    let (mut x, mut y) = (vec![0.0; d], vec![0.0; d]);
    let mut s = 0.0;
    for j in 0..mu.len() {
        mu.atom(j, &mut x);
        nu.atom(j, &mut y);
        s += x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok((s / mu.len() as f64).sqrt())
}

/// A scalar function `f(z, μ)` together with its Lions derivative
/// `∂_μ f(z, μ, y) ∈ R^d`.
pub trait LionsFunction {
    fn value<M: MeasureView>(&self, z: &[f64], mu: &M) -> f64;
    fn lions_derivative<M: MeasureView>(&self, z: &[f64], mu: &M, y: &[f64], out: &mut [f64]);
}

/// Both sides of the first-order measure Taylor identity along the straight
/// path between two empirical measures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Compares `f(z, emp(X)) − f(z, emp(Y))` against
/// `(1/N) ∫₀¹ Σ_ĵ ∂_μ f(z, emp(Y + θ(X − Y)), y^ĵ + θ(x^ĵ − y^ĵ)) · (x^ĵ − y^ĵ) dθ`
/// with the θ-integral evaluated by a `order`-point Gauss–Legendre rule.
pub fn measure_taylor_check<F: LionsFunction>(
    f: &F,
    z: &[f64],
    x_atoms: &[f64],
    y_atoms: &[f64],
    dim: usize,
    order: usize,
) -> Result<TaylorCheck> {
    if x_atoms.len() != y_atoms.len() {
        return Err(Error::domain(format!(
            "atom counts differ: {} vs {}",
            x_atoms.len() / dim.max(1),
            y_atoms.len() / dim.max(1)
        )));
    }
    let mu_x = EmpiricalMeasure::new(x_atoms, dim)?;
    let mu_y = EmpiricalMeasure::new(y_atoms, dim)?;
    let n = mu_x.len();
    let rule = UnitRule::new(order)?;
    let lhs = f.value(z, &mu_x) - f.value(z, &mu_y);

    let mut path = vec![0.0; x_atoms.len()];
    let mut grad = vec![0.0; dim];
    let mut rhs = 0.0;
    for (theta, w) in rule.iter() {
        for ((p, x), y) in path.iter_mut().zip(x_atoms).zip(y_atoms) {
            *p = y + theta * (x - y);
        }
        let mu_theta = EmpiricalMeasure::new_unchecked(&path[..], dim);
        let mut sum = 0.0;
        for j in 0..n {
            let at = mu_theta.atom_slice(j);
            f.lions_derivative(z, &mu_theta, at, &mut grad);
            let (xj, yj) = (
                &x_atoms[j * dim..(j + 1) * dim],
                &y_atoms[j * dim..(j + 1) * dim],
            );
            sum += grad
                .iter()
                .zip(xj.iter().zip(yj))
                .map(|(g, (a, b))| g * (a - b))
                .sum::<f64>();
        }
        rhs += w * sum;
    }
    rhs /= n as f64;
    Ok(TaylorCheck {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emp(atoms: &[f64], d: usize) -> EmpiricalMeasure<'_> {
        EmpiricalMeasure::new(atoms, d).unwrap()
    }

    /// Brute-force W₂ over all permutations.
    fn w2_by_permutations(a: &[f64], b: &[f64]) -> f64 {
        fn permute(k: usize, idx: &mut Vec<usize>, best: &mut f64, a: &[f64], b: &[f64]) {
            if k == idx.len() {
                let s: f64 = idx
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| (a[i] - b[j]).powi(2))
                    .sum();
                *best = best.min(s);
                return;
            }
            for i in k..idx.len() {
                idx.swap(k, i);
                permute(k + 1, idx, best, a, b);
                idx.swap(k, i);
            }
        }
        let mut idx: Vec<usize> = (0..a.len()).collect();
        let mut best = f64::INFINITY;
        permute(0, &mut idx, &mut best, a, b);
        (best / a.len() as f64).sqrt()
    }

    #[test]
    fn w2_to_dirac_examples() {
        assert_eq!(w2_to_dirac0(&emp(&[0.0, 0.0], 1)), 0.0);
        assert_eq!(w2_to_dirac0(&emp(&[3.0, -4.0], 1)), 12.5f64.sqrt());
        let mu = emp(&[3.0, -4.0, 1.0], 1);
        let zero = [0.0, 0.0, 0.0];
        let exact = w2_1d_exact(&mu, &emp(&zero, 1)).unwrap();
        assert!((exact - w2_to_dirac0(&mu)).abs() < 1e-15);
    }

    #[test]
    fn w2_exact_examples() {
        let v = w2_1d_exact(&emp(&[0.0, 2.0], 1), &emp(&[1.0, 3.0], 1)).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert!((w2_by_permutations(&[0.0, 2.0], &[1.0, 3.0]) - 1.0).abs() < 1e-15);
        let a = [0.3, -1.0, 2.5];
        assert_eq!(w2_1d_exact(&emp(&a, 1), &emp(&a, 1)).unwrap(), 0.0);
        let c = -2.75;
        assert_eq!(
            w2_1d_exact(&emp(&[0.0], 1), &emp(&[c], 1)).unwrap(),
            c.abs()
        );
    }

    #[test]
    fn w2_exact_needs_one_dimension() {
        let a = [0.0, 1.0, 2.0, 3.0];
        let err = w2_1d_exact(&emp(&a, 2), &emp(&a, 2)).unwrap_err();
        assert!(matches!(err, Error::UnsupportedDimension(_)));
    }

    #[test]
    fn index_bound_examples() {
        let a = [0.5, 1.0, -2.0];
        assert_eq!(w2_index_bound(&emp(&a, 1), &emp(&a, 1)).unwrap(), 0.0);
        let mu = emp(&[0.0, 2.0], 1);
        let nu = emp(&[3.0, 1.0], 1);
        let bound = w2_index_bound(&mu, &nu).unwrap();
        assert!((bound - 5f64.sqrt()).abs() < 1e-15);
        assert!(bound >= w2_1d_exact(&mu, &nu).unwrap());
        assert!(w2_index_bound(&mu, &emp(&[1.0], 1)).is_err());
    }

    #[test]
    fn shifted_examples() {
        let atoms = [1.0, -2.0, 0.5, 4.0];
        let base = emp(&atoms, 1);
        let zero = [0.0];
        let same = base.shifted(2, &zero).unwrap();
        assert_eq!(same.mean(0), base.mean(0));
        assert_eq!(same.second_moment(), base.second_moment());

        let v = [1.5];
        let sh = base.shifted(1, &v).unwrap();
        let bound = w2_index_bound(&base, &sh).unwrap();
        assert!((bound - 1.5 / 2.0).abs() < 1e-15);
        assert!((sh.mean(0) - (base.mean(0) + 1.5 / 4.0)).abs() < 1e-15);
        assert!(base.shifted(4, &v).is_err());
    }

    #[test]
    fn shifted_second_moment_matches_copy() {
        let atoms = [1.0, -2.0, 0.5, 4.0, 0.0, 1.0];
        let base = emp(&atoms, 2);
        let v = [0.25, -3.0];
        let sh = base.shifted(1, &v).unwrap();
        let copy = collect_atoms(&sh);
        let direct = emp(&copy, 2);
        assert!((direct.second_moment() - sh.second_moment()).abs() < 1e-14);
        for u in 0..2 {
            assert!((direct.mean(u) - sh.mean(u)).abs() < 1e-15);
        }
        let w_sh = sh.w2_to_dirac0().powi(2);
        let x = base.atom_slice(1);
        let expect = base.second_moment()
            + ((x[0] + v[0]).powi(2) + (x[1] + v[1]).powi(2) - x[0] * x[0] - x[1] * x[1]) / 3.0;
        assert!((w_sh - expect).abs() < 1e-13);
    }

    struct LinearMean;
    impl LionsFunction for LinearMean {
        fn value<M: MeasureView>(&self, z: &[f64], mu: &M) -> f64 {
            z[0] * mu.mean(0)
        }
        fn lions_derivative<M: MeasureView>(&self, z: &[f64], _: &M, _: &[f64], out: &mut [f64]) {
            out[0] = z[0];
        }
    }

    struct SquaredMean;
    impl LionsFunction for SquaredMean {
        fn value<M: MeasureView>(&self, _: &[f64], mu: &M) -> f64 {
            mu.mean(0).powi(2)
        }
        fn lions_derivative<M: MeasureView>(&self, _: &[f64], mu: &M, _: &[f64], out: &mut [f64]) {
            out[0] = 2.0 * mu.mean(0);
        }
    }

    #[test]
    fn taylor_identity_linear_in_mean() {
        let c = measure_taylor_check(
            &LinearMean,
            &[1.7],
            &[0.3, -2.0, 5.0],
            &[1.0, 1.0, -1.0],
            1,
            2,
        )
        .unwrap();
        assert!(c.residual < 1e-12, "{c:?}");
    }

    #[test]
    fn taylor_identity_squared_mean_two_atoms() {
        // closed form: X = {1, 3}, Y = {0, -2}: means 2 and -1, lhs = 4 - 1 = 3
        let c =
            measure_taylor_check(&SquaredMean, &[0.0], &[1.0, 3.0], &[0.0, -2.0], 1, 4).unwrap();
        assert!((c.lhs - 3.0).abs() < 1e-15);
        assert!(c.residual < 1e-10, "{c:?}");
    }

    #[test]
    fn taylor_identity_equal_atoms() {
        let a = [0.4, -0.1, 2.0];
        let c = measure_taylor_check(&SquaredMean, &[0.0], &a, &a, 1, 3).unwrap();
        assert_eq!(c.lhs, 0.0);
        assert_eq!(c.rhs, 0.0);
    }

    #[test]
    fn taylor_check_rejects_mismatched_counts() {
        assert!(measure_taylor_check(&SquaredMean, &[0.0], &[1.0, 2.0], &[1.0], 1, 4).is_err());
    }

    struct ExpMean;
    impl LionsFunction for ExpMean {
        fn value<M: MeasureView>(&self, z: &[f64], mu: &M) -> f64 {
            (z[0] * mu.mean(0)).exp()
        }
        fn lions_derivative<M: MeasureView>(&self, z: &[f64], mu: &M, _: &[f64], out: &mut [f64]) {
            out[0] = z[0] * (z[0] * mu.mean(0)).exp();
        }
    }

    #[test]
    fn taylor_residual_shrinks_with_order() {
        let x = [1.0, 2.5, -0.5];
        let y = [-1.0, 0.0, 0.3];
        let mut last = f64::INFINITY;
        for q in 1..=6 {
            let r = measure_taylor_check(&ExpMean, &[1.3], &x, &y, 1, q)
                .unwrap()
                .residual;
            assert!(r <= last.max(1e-14), "order {q}: {r} > {last}");
            last = r;
        }
        assert!(last < 1e-10);
    }

    proptest! {
        #[test]
        fn index_bound_dominates_exact(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..12),
            seed in 0usize..1000,
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let mut b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            // deterministic reshuffle of the second list
            let n = b.len();
            for i in 0..n {
                b.swap(i, (i * 7 + seed) % n);
            }
            let (mu, nu) = (emp(&a, 1), emp(&b, 1));
            let exact = w2_1d_exact(&mu, &nu).unwrap();
            prop_assert!(w2_index_bound(&mu, &nu).unwrap() >= exact - 1e-12);
            if n <= 6 {
                prop_assert!((exact - w2_by_permutations(&a, &b)).abs() < 1e-10);
            }
        }
    }
}
