//! Step-size dependent taming of the coefficients and of the operator
//! products that enter the Milstein corrections, together with empirical
//! probes of the growth, coercivity and monotonicity conditions.
//!
//! Every tamed object has the ratio form `f / (1 + u^q)` with
//! `u = n^{-α}|f| / scale`, applied to the whole vector, matrix or tensor.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::TamingMode;
use crate::error::{Error, Result};
use crate::measure::{w2_1d_exact, w2_index_bound, EmpiricalMeasure, MeasureView};
use crate::model::Model;
use crate::models::operators::{contract_sigma_gamma, contract_sigma_sigma};
use crate::output::{csv_writer, join_vector};
use crate::quadrature::UnitRule;
use crate::seed::{SeedSequence, Stream};

pub const ALPHA_DRIFT: f64 = 1.0 / 3.0;
pub const ALPHA_DIFFUSION: f64 = 1.0 / 6.0;
pub const ALPHA_OPERATOR: f64 = 1.0 / 6.0;

/// `1 / (4 p̄)`.
pub fn alpha_jump(pbar: f64) -> f64 {
    0.25 / pbar
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `1 / (1 + u^q)` without overflow for large `u`.
#[inline]
fn ratio_factor(u: f64, q: f64) -> f64 {
    let pow = |base: f64| {
        if q.fract() == 0.0 && q <= 64.0 {
            base.powi(q as i32)
        } else {
            base.powf(q)
        }
    };
    if u <= 1.0 {
        1.0 / (1.0 + pow(u))
    } else {
        let w = pow(1.0 / u);
        w / (1.0 + w)
    }
}

/// Multiplies `f` by `1 / (1 + (rate·|f|/scale)^q)` where `rate = n^{-α}`.
/// Returns the factor.
#[inline]
pub(crate) fn tame_in_place(f: &mut [f64], scale: f64, rate: f64, q: f64) -> f64 {
    let size = norm(f);
    if size == 0.0 {
        return 1.0;
    }
    let k = ratio_factor(rate * size / scale, q);
    f.iter_mut().for_each(|v| *v *= k);
    k
}

/// `f / (1 + n^{-α}|f|/scale)`.
pub fn tame_scalar_family(f: &[f64], scale: f64, alpha: f64, n: usize) -> Result<Vec<f64>> {
    if !(scale > 0.0) || n == 0 {
        return Err(Error::domain(format!(
            "taming needs scale > 0 and n >= 1, got scale {scale}, n {n}"
        )));
    }
    let mut out = f.to_vec();
    tame_in_place(&mut out, scale, (n as f64).powf(-alpha), 1.0);
    Ok(out)
}

/// Runs `f` on a zeroed scratch buffer, on the stack when small.
#[inline]
fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    if len <= 8 {
        let mut buf = [0.0; 8];
        f(&mut buf[..len])
    } else if len <= 64 {
        let mut buf = [0.0; 64];
        f(&mut buf[..len])
    } else {
        f(&mut vec![0.0; len])
    }
}

#[derive(Debug, Clone, Copy)]
struct Family {
    rate: f64,
    q: f64,
}

impl Family {
    fn new(alpha: f64, n: usize) -> Self {
        Self {
            rate: (n as f64).powf(-alpha),
            q: 1.0 / alpha,
        }
    }
}

/// A model evaluated through tamed coefficients for a fixed step count.
///
/// The drift and the operator products use the scale `1 + |x| + W₂(μ, δ₀)`;
/// the diffusion and the jump coefficient use `1 + |x|`, so their tamed
/// versions depend on the measure only through the untamed value.
#[derive(Debug, Clone, Copy)]
pub struct TamedModel<'a, T: Model> {
    base: &'a T,
    n: usize,
    mode: TamingMode,
    drift: Family,
    diffusion: Family,
    operator: Family,
    jump: Family,
}

pub fn make_tamed<T: Model>(model: &T, n: usize, mode: TamingMode) -> Result<TamedModel<'_, T>> {
    if n == 0 {
        return Err(Error::domain("step count must be positive"));
    }
    let pbar = model.pbar();
    if !(pbar > 0.0 && pbar.is_finite()) {
        return Err(Error::domain(format!("p̄ must be positive, got {pbar}")));
    }
    Ok(TamedModel {
        base: model,
        n,
        mode,
        drift: Family::new(ALPHA_DRIFT, n),
        diffusion: Family::new(ALPHA_DIFFUSION, n),
        operator: Family::new(ALPHA_OPERATOR, n),
        jump: Family::new(alpha_jump(pbar), n),
    })
}

impl<'a, T: Model> TamedModel<'a, T> {
    pub fn base(&self) -> &'a T {
        self.base
    }

    pub fn steps(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> TamingMode {
        self.mode
    }

    pub fn is_identity(&self) -> bool {
        self.mode == TamingMode::Off
    }

    fn apply(&self, f: &mut [f64], scale: f64, fam: Family) -> f64 {
        match self.mode {
            TamingMode::Off => 1.0,
            TamingMode::On => tame_in_place(f, scale, fam.rate, fam.q),
        }
    }

    fn state_scale(x: &[f64]) -> f64 {
        1.0 + norm(x)
    }

    fn full_scale<M: MeasureView>(x: &[f64], mu: &M) -> f64 {
        1.0 + norm(x) + mu.w2_to_dirac0()
    }

    /// `b̂(x, μ)`; returns the factor applied (1 when inactive).
    pub fn drift<M: MeasureView>(&self, x: &[f64], mu: &M, out: &mut [f64]) -> f64 {
        self.base.drift(x, mu, out);
        self.apply(out, Self::full_scale(x, mu), self.drift)
    }

    /// `σ̂(x, μ)`, `d×m` row-major.
    pub fn diffusion<M: MeasureView>(&self, x: &[f64], mu: &M, out: &mut [f64]) -> f64 {
        self.base.diffusion(x, mu, out);
        self.apply(out, Self::state_scale(x), self.diffusion)
    }

    /// Tames an untamed diffusion value `sig` evaluated at `x`.
    pub fn tame_diffusion_value(&self, x: &[f64], sig: &mut [f64]) -> f64 {
        self.apply(sig, Self::state_scale(x), self.diffusion)
    }

    /// `γ̂(x, μ, z)`.
    pub fn jump<M: MeasureView>(&self, x: &[f64], mu: &M, z: &[f64], out: &mut [f64]) -> f64 {
        self.base.jump(x, mu, z, out);
        self.apply(out, Self::state_scale(x), self.jump)
    }

    /// `Σ_j λ_j γ̂(x, μ, z_j)`.
    pub fn jump_compensator<M: MeasureView>(&self, x: &[f64], mu: &M, out: &mut [f64]) {
        if self.is_identity() {
            self.base.jump_compensator(x, mu, out);
            return;
        }
        let marks = self.base.marks();
        out.fill(0.0);
        with_scratch(out.len(), |g| {
            for j in 0..marks.len() {
                self.jump(x, mu, marks.atom(j), g);
                let w = marks.weight(j);
                out.iter_mut().zip(g.iter()).for_each(|(o, v)| *o += w * v);
            }
        });
    }

    /// Tamed `𝔇ₓ^{σ^{ℓ₁}} σ^{uℓ}(x, μ)`, written to `out[(ℓ₁*d + u)*m + ℓ]`.
    /// `sig` is the untamed `σ(x, μ)`.
    pub fn dx_sigma_sigma<M: MeasureView>(&self, x: &[f64], mu: &M, sig: &[f64], out: &mut [f64]) {
        let (d, m) = (self.base.state_dim(), self.base.noise_dim());
        with_scratch(d * m * d, |jac| {
            self.base.diffusion_dx(x, mu, jac);
            contract_sigma_sigma(jac, sig, d, m, out);
        });
        self.apply(out, Self::full_scale(x, mu), self.operator);
    }

    /// Tamed `𝔇_μ^{σ^{ℓ₁}} σ^{uℓ}(x, μ, y)`; `sig_y` is the untamed `σ(y, μ)`.
    pub fn dmu_sigma_sigma<M: MeasureView>(
        &self,
        x: &[f64],
        mu: &M,
        y: &[f64],
        sig_y: &[f64],
        out: &mut [f64],
    ) {
        let (d, m) = (self.base.state_dim(), self.base.noise_dim());
        with_scratch(d * m * d, |jac| {
            self.base.diffusion_dmu(x, mu, y, jac);
            contract_sigma_sigma(jac, sig_y, d, m, out);
        });
        self.apply(out, Self::full_scale(x, mu), self.operator);
    }

    /// Tamed `𝔇ₓ^{σ^{ℓ₁}} γ^u(x, μ, z)`, written to `out[ℓ₁*d + u]`.
    pub fn dx_sigma_gamma<M: MeasureView>(
        &self,
        x: &[f64],
        mu: &M,
        z: &[f64],
        sig: &[f64],
        out: &mut [f64],
    ) {
        let (d, m) = (self.base.state_dim(), self.base.noise_dim());
        with_scratch(d * d, |jac| {
            self.base.jump_dx(x, mu, z, jac);
            contract_sigma_gamma(jac, sig, d, m, out);
        });
        self.apply(out, Self::full_scale(x, mu), self.operator);
    }

    /// Tamed `𝔇_μ^{σ^{ℓ₁}} γ^u(x, μ, y, z)`.
    pub fn dmu_sigma_gamma<M: MeasureView>(
        &self,
        x: &[f64],
        mu: &M,
        y: &[f64],
        z: &[f64],
        sig_y: &[f64],
        out: &mut [f64],
    ) {
        let (d, m) = (self.base.state_dim(), self.base.noise_dim());
        with_scratch(d * d, |jac| {
            self.base.jump_dmu(x, mu, y, z, jac);
            contract_sigma_gamma(jac, sig_y, d, m, out);
        });
        self.apply(out, Self::full_scale(x, mu), self.operator);
    }
}

/// Sampling plan for [`probe_assumptions`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSpec {
    /// States and atoms are drawn uniformly from `[-r, r]^d` for each `r`.
    pub radii: Vec<f64>,
    /// Samples per radius and per step count.
    pub samples: usize,
    /// Atoms of each sampled empirical measure.
    pub atoms: usize,
    /// Step counts for the tamed families.
    pub steps: Vec<usize>,
    /// Standard deviations of the Gaussian state laws used for the L² gaps.
    pub gap_scales: Vec<f64>,
    pub epsilon: f64,
    /// The constant multiplying the diffusion and jump terms in the
    /// monotonicity expression.
    pub monotonicity_alpha: f64,
    pub quadrature_order: usize,
    /// A family is flagged when its value at the largest radius (or step
    /// count) exceeds this factor times `max(previous, 1)`.
    pub growth_factor: f64,
    pub seed: u64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            radii: vec![1.0, 10.0, 100.0],
            samples: 2000,
            atoms: 8,
            steps: vec![4, 64, 1024, 1 << 16, 1 << 22],
            gap_scales: vec![0.5, 1.0],
            epsilon: 0.5,
            monotonicity_alpha: 1.5,
            quadrature_order: 24,
            growth_factor: 4.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub assumption: &'static str,
    /// `None` for the families that do not depend on the step count.
    pub n: Option<usize>,
    pub radius: f64,
    pub max_ratio: f64,
    pub argmax_x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    /// Families whose maxima grow across radii or step counts.
    pub flagged: Vec<String>,
    pub non_finite: usize,
}

impl ProbeReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty() && self.non_finite == 0
    }

    /// Largest ratio of a family over all radii and step counts.
    pub fn max_for(&self, assumption: &str) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.assumption == assumption)
            .map(|r| r.max_ratio)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w)?;
        out.write_record([
            "assumption",
            "n",
            "radius",
            "max_ratio",
            "argmax_x",
            "flagged",
        ])?;
        for r in &self.rows {
            let flagged = self.flagged.iter().any(|f| f == r.assumption);
            out.write_record([
                r.assumption.to_string(),
                r.n.map(|n| n.to_string()).unwrap_or_default(),
                r.radius.to_string(),
                r.max_ratio.to_string(),
                join_vector(&r.argmax_x),
                flagged.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub const GROWTH: &str = "growth";
pub const COERCIVITY: &str = "coercivity";
pub const MONOTONICITY: &str = "monotonicity";
pub const TAMING_GAP: &str = "taming_gap";

struct Tracker {
    best: f64,
    arg: Vec<f64>,
    non_finite: usize,
}

impl Tracker {
    fn new() -> Self {
        Self {
            best: f64::NEG_INFINITY,
            arg: Vec::new(),
            non_finite: 0,
        }
    }

    fn push(&mut self, v: f64, x: &[f64]) {
        if !v.is_finite() {
            self.non_finite += 1;
        } else if v > self.best {
            self.best = v;
            self.arg = x.to_vec();
        }
    }
}

fn uniform_cube(rng: &mut impl Rng, r: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = rng.random_range(-r..=r));
}

fn gaussian(rng: &mut impl Rng, s: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|v| {
        let z: f64 = StandardNormal.sample(rng);
        *v = s * z
    });
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn diff_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `2x·b + |σ|² + Σλ|γ|²` over `1 + |x|² + W₂²`, untamed.
fn growth_ratio<T: Model>(model: &T, x: &[f64], mu: &EmpiricalMeasure<'_>) -> f64 {
    let (d, m) = (model.state_dim(), model.noise_dim());
    let (mut b, mut s, mut g) = (vec![0.0; d], vec![0.0; d * m], vec![0.0; d]);
    model.drift(x, mu, &mut b);
    model.diffusion(x, mu, &mut s);
    let marks = model.marks();
    let mut jumps = 0.0;
    for j in 0..marks.len() {
        model.jump(x, mu, marks.atom(j), &mut g);
        jumps += marks.weight(j) * sq(&g);
    }
    (2.0 * dot(x, &b) + sq(&s) + jumps) / (1.0 + sq(x) + mu.second_moment())
}

fn coercivity_ratio<T: Model>(
    tamed: &TamedModel<'_, T>,
    rule: &UnitRule,
    x: &[f64],
    mu: &EmpiricalMeasure<'_>,
) -> f64 {
    let model = tamed.base();
    let (d, m) = (model.state_dim(), model.noise_dim());
    let p = model.pbar();
    let (mut b, mut s, mut g) = (vec![0.0; d], vec![0.0; d * m], vec![0.0; d]);
    tamed.drift(x, mu, &mut b);
    tamed.diffusion(x, mu, &mut s);
    let ax = norm(x);
    let lead = ax.powf(p - 2.0);
    let marks = model.marks();
    let mut jumps = 0.0;
    let mut shifted = vec![0.0; d];
    for j in 0..marks.len() {
        tamed.jump(x, mu, marks.atom(j), &mut g);
        let integral = rule.integrate(|th| {
            for u in 0..d {
                shifted[u] = x[u] + th * g[u];
            }
            (1.0 - th) * norm(&shifted).powf(p - 2.0)
        });
        jumps += marks.weight(j) * sq(&g) * integral;
    }
    let num = 2.0 * lead * dot(x, &b) + (p - 1.0) * lead * sq(&s) + 2.0 * (p - 1.0) * jumps;
    num / (1.0 + ax.powf(p) + mu.w2_to_dirac0().powf(p))
}

fn monotonicity_ratio<T: Model>(
    model: &T,
    alpha: f64,
    x: &[f64],
    mu: &EmpiricalMeasure<'_>,
    x2: &[f64],
    mu2: &EmpiricalMeasure<'_>,
) -> Result<f64> {
    let (d, m) = (model.state_dim(), model.noise_dim());
    let (mut b, mut s, mut g) = (vec![0.0; d], vec![0.0; d * m], vec![0.0; d]);
    let (mut b2, mut s2, mut g2) = (vec![0.0; d], vec![0.0; d * m], vec![0.0; d]);
    model.drift(x, mu, &mut b);
    model.drift(x2, mu2, &mut b2);
    model.diffusion(x, mu, &mut s);
    model.diffusion(x2, mu2, &mut s2);
    let marks = model.marks();
    let mut jumps = 0.0;
    for j in 0..marks.len() {
        model.jump(x, mu, marks.atom(j), &mut g);
        model.jump(x2, mu2, marks.atom(j), &mut g2);
        jumps += marks.weight(j) * diff_sq(&g, &g2);
    }
    let dx: Vec<f64> = x.iter().zip(x2).map(|(a, c)| a - c).collect();
    let db: Vec<f64> = b.iter().zip(&b2).map(|(a, c)| a - c).collect();
    let w2 = if d == 1 {
        w2_1d_exact(mu, mu2)?
    } else {
        w2_index_bound(mu, mu2)?
    };
    let den = sq(&dx) + w2 * w2;
    if den < 1e-24 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((2.0 * dot(&dx, &db) + alpha * diff_sq(&s, &s2) + alpha * jumps) / den)
}

/// `|b − b̂|² + |σ − σ̂|² + Σλ|γ − γ̂|²`.
fn taming_gap<T: Model>(tamed: &TamedModel<'_, T>, x: &[f64], mu: &EmpiricalMeasure<'_>) -> f64 {
    let model = tamed.base();
    let (d, m) = (model.state_dim(), model.noise_dim());
    let (mut f, mut t) = (vec![0.0; d * m], vec![0.0; d * m]);
    model.drift(x, mu, &mut f[..d]);
    tamed.drift(x, mu, &mut t[..d]);
    let mut gap = diff_sq(&f[..d], &t[..d]);
    model.diffusion(x, mu, &mut f);
    tamed.diffusion(x, mu, &mut t);
    gap += diff_sq(&f, &t);
    let marks = model.marks();
    for j in 0..marks.len() {
        model.jump(x, mu, marks.atom(j), &mut f[..d]);
        tamed.jump(x, mu, marks.atom(j), &mut t[..d]);
        gap += marks.weight(j) * diff_sq(&f[..d], &t[..d]);
    }
    gap
}

/// Compares the last two entries: only the asymptotic end of a sweep
/// decides.
fn trend_flag(values: &[f64], factor: f64) -> bool {
    match values {
        [.., a, b] => b.is_finite() && *b > factor * a.max(1.0),
        _ => false,
    }
}

/// Evaluates the growth, coercivity, monotonicity and taming-gap
/// expressions on sampled states and measures. Maxima are reported per
/// radius (and per step count for the tamed families); a family is flagged
/// when its maximum grows with the radius or with `n`.
pub fn probe_assumptions<T: Model>(model: &T, spec: &ProbeSpec) -> Result<ProbeReport> {
    if spec.radii.is_empty() || spec.samples == 0 || spec.atoms == 0 {
        return Err(Error::config("probe needs radii, samples and atoms"));
    }
    if spec.steps.contains(&0) {
        return Err(Error::config("probe step counts must be positive"));
    }
    let d = model.state_dim();
    let rule = UnitRule::new(spec.quadrature_order)?;
    let seeds = SeedSequence::new(spec.seed);
    let mut rows = Vec::new();
    let mut flagged = Vec::new();
    let mut non_finite = 0;
    let mut x = vec![0.0; d];
    let mut x2 = vec![0.0; d];
    let mut atoms = vec![0.0; spec.atoms * d];
    let mut atoms2 = vec![0.0; spec.atoms * d];

    // growth and monotonicity use the untamed coefficients
    let mut growth = Vec::new();
    let mut mono = Vec::new();
    for (ri, &r) in spec.radii.iter().enumerate() {
        let mut rng = seeds.rng(0, ri, Stream::Probe);
        let (mut tg, mut tm) = (Tracker::new(), Tracker::new());
        for _ in 0..spec.samples {
            uniform_cube(&mut rng, r, &mut x);
            uniform_cube(&mut rng, r, &mut atoms);
            uniform_cube(&mut rng, r, &mut x2);
            uniform_cube(&mut rng, r, &mut atoms2);
            let mu = EmpiricalMeasure::new_unchecked(&atoms[..], d);
            let mu2 = EmpiricalMeasure::new_unchecked(&atoms2[..], d);
            tg.push(growth_ratio(model, &x, &mu), &x);
            tm.push(
                monotonicity_ratio(model, spec.monotonicity_alpha, &x, &mu, &x2, &mu2)?,
                &x,
            );
        }
        non_finite += tg.non_finite + tm.non_finite;
        growth.push(tg.best);
        mono.push(tm.best);
        rows.push(ProbeRow {
            assumption: GROWTH,
            n: None,
            radius: r,
            max_ratio: tg.best,
            argmax_x: tg.arg,
        });
        rows.push(ProbeRow {
            assumption: MONOTONICITY,
            n: None,
            radius: r,
            max_ratio: tm.best,
            argmax_x: tm.arg,
        });
    }
    if trend_flag(&growth, spec.growth_factor) {
        flagged.push(GROWTH.to_string());
    }
    if trend_flag(&mono, spec.growth_factor) {
        flagged.push(MONOTONICITY.to_string());
    }

    let mut coercive_by_n = Vec::new();
    for &n in &spec.steps {
        let tamed = make_tamed(model, n, TamingMode::On)?;
        let mut by_radius = Vec::new();
        for (ri, &r) in spec.radii.iter().enumerate() {
            // the same samples for every n
            let mut rng = seeds.rng(1, ri, Stream::Probe);
            let mut t = Tracker::new();
            for _ in 0..spec.samples {
                uniform_cube(&mut rng, r, &mut x);
                uniform_cube(&mut rng, r, &mut atoms);
                let mu = EmpiricalMeasure::new_unchecked(&atoms[..], d);
                t.push(coercivity_ratio(&tamed, &rule, &x, &mu), &x);
            }
            non_finite += t.non_finite;
            by_radius.push(t.best);
            rows.push(ProbeRow {
                assumption: COERCIVITY,
                n: Some(n),
                radius: r,
                max_ratio: t.best,
                argmax_x: t.arg,
            });
        }
        if trend_flag(&by_radius, spec.growth_factor) && !flagged.iter().any(|f| f == COERCIVITY) {
            flagged.push(COERCIVITY.to_string());
        }
        coercive_by_n.push(by_radius.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    if trend_flag(&coercive_by_n, spec.growth_factor) && !flagged.iter().any(|f| f == COERCIVITY) {
        flagged.push(COERCIVITY.to_string());
    }

    let power = 1.0 + 2.0 / (spec.epsilon + 2.0);
    for (si, &s) in spec.gap_scales.iter().enumerate() {
        let mut by_n = Vec::new();
        for &n in &spec.steps {
            let tamed = make_tamed(model, n, TamingMode::On)?;
            let mut rng = seeds.rng(2, si, Stream::Probe);
            let mut t = Tracker::new();
            let mut total = 0.0;
            for _ in 0..spec.samples {
                gaussian(&mut rng, s, &mut x);
                gaussian(&mut rng, s, &mut atoms);
                let mu = EmpiricalMeasure::new_unchecked(&atoms[..], d);
                let g = taming_gap(&tamed, &x, &mu);
                t.push(g, &x);
                total += g;
            }
            non_finite += t.non_finite;
            let scaled = (n as f64).powf(power) * total / spec.samples as f64;
            by_n.push(scaled);
            rows.push(ProbeRow {
                assumption: TAMING_GAP,
                n: Some(n),
                radius: s,
                max_ratio: scaled,
                argmax_x: t.arg,
            });
        }
        if trend_flag(&by_n, spec.growth_factor) && !flagged.iter().any(|f| f == TAMING_GAP) {
            flagged.push(TAMING_GAP.to_string());
        }
    }

    Ok(ProbeReport {
        rows,
        flagged,
        non_finite,
    })
}

/// Outcome of [`min_bounds_check`] for one inequality family.
#[derive(Debug, Clone, PartialEq)]
pub struct MinBoundRow {
    pub family: &'static str,
    pub n: usize,
    /// Largest `tamed / (C · min{growth bound, untamed})`.
    pub max_ratio: f64,
    pub checked: usize,
    pub violations: usize,
}

pub const MIN_BOUND_FAMILIES: [&str; 5] = [
    "drift",
    "diffusion",
    "diffusion_operators",
    "jump_moment",
    "jump_operator_moments",
];

/// Relative slack for rounding in [`min_bounds_check`].
const BOUND_SLACK: f64 = 1e-12;

/// Fuzzes the tamed coefficients at step count `n` against the min-bounds
/// `|f̂| ≤ C min{n^α (1 + |x| + W₂(μ, δ₀)), |f|}` of every family, with
/// `C = 1` for the pointwise families and `C = max(1, ν(Z))` for the
/// `p̄`-th moment families. States and atoms are drawn from cubes whose
/// half-width is log-uniform on `[10⁻², 10³]`.
pub fn min_bounds_check<T: Model>(
    model: &T,
    n: usize,
    samples: usize,
    atoms: usize,
    seed: u64,
) -> Result<Vec<MinBoundRow>> {
    let tamed = make_tamed(model, n, TamingMode::On)?;
    let (d, m) = (model.state_dim(), model.noise_dim());
    let marks = model.marks();
    let pbar = model.pbar();
    let nf = n as f64;
    let c_moment = marks.total_intensity().max(1.0);
    let mut rows: Vec<MinBoundRow> = MIN_BOUND_FAMILIES
        .iter()
        .map(|f| MinBoundRow {
            family: f,
            n,
            max_ratio: 0.0,
            checked: 0,
            violations: 0,
        })
        .collect();
    let record = |row: &mut MinBoundRow, tamed_size: f64, bound: f64| {
        row.checked += 1;
        let ratio = if bound > 0.0 {
            tamed_size / bound
        } else if tamed_size == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        row.max_ratio = row.max_ratio.max(ratio);
        if tamed_size > bound * (1.0 + BOUND_SLACK) {
            row.violations += 1;
        }
    };

    let seeds = SeedSequence::new(seed);
    let mut rng = seeds.rng(n, 0, Stream::Probe);
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut cloud = vec![0.0; atoms.max(1) * d];
    let mut f = vec![0.0; d.max(d * m)];
    let mut g = vec![0.0; d * m];
    let mut jac = vec![0.0; d * m * d];
    let mut op = vec![0.0; d * m * m];
    let mut op_hat = vec![0.0; d * m * m];
    let mut sig = vec![0.0; d * m];
    let mut sig_y = vec![0.0; d * m];
    let mut moments = vec![0.0; 2 * m * d];
    for _ in 0..samples {
        let r = 10f64.powf(rng.random_range(-2.0..3.0));
        uniform_cube(&mut rng, r, &mut x);
        uniform_cube(&mut rng, r, &mut y);
        uniform_cube(&mut rng, r, &mut cloud);
        let mu = EmpiricalMeasure::new_unchecked(&cloud[..], d);
        let scale = 1.0 + norm(&x) + mu.w2_to_dirac0();

        let b = &mut f[..d];
        model.drift(&x, &mu, b);
        let raw = norm(b);
        tamed.drift(&x, &mu, b);
        record(
            &mut rows[0],
            norm(b),
            (nf.powf(ALPHA_DRIFT) * scale).min(raw),
        );

        model.diffusion(&x, &mu, &mut sig);
        let s = &mut f[..d * m];
        tamed.diffusion(&x, &mu, s);
        record(
            &mut rows[1],
            norm(s),
            (nf.powf(ALPHA_DIFFUSION) * scale).min(norm(&sig)),
        );

        let op_bound = nf.powf(ALPHA_OPERATOR) * scale;
        model.diffusion_dx(&x, &mu, &mut jac);
        contract_sigma_sigma(&jac, &sig, d, m, &mut op);
        tamed.dx_sigma_sigma(&x, &mu, &sig, &mut op_hat);
        for (a, b) in op_hat.iter().zip(&op) {
            record(&mut rows[2], a.abs(), op_bound.min(b.abs()));
        }
        model.diffusion(&y, &mu, &mut sig_y);
        model.diffusion_dmu(&x, &mu, &y, &mut jac);
        contract_sigma_sigma(&jac, &sig_y, d, m, &mut op);
        tamed.dmu_sigma_sigma(&x, &mu, &y, &sig_y, &mut op_hat);
        for (a, b) in op_hat.iter().zip(&op) {
            record(&mut rows[2], a.abs(), op_bound.min(b.abs()));
        }

        if marks.is_empty() {
            continue;
        }
        let (mut raw_m, mut hat_m) = (0.0, 0.0);
        moments.fill(0.0);
        for j in 0..marks.len() {
            let w = marks.weight(j);
            let z = marks.atom(j);
            let gz = &mut f[..d];
            model.jump(&x, &mu, z, gz);
            raw_m += w * norm(gz).powf(pbar);
            tamed.jump(&x, &mu, z, gz);
            hat_m += w * norm(gz).powf(pbar);

            // operator moments per entry: raw in the first half, tamed in the second
            let (raw_ops, hat_ops) = moments.split_at_mut(m * d);
            model.jump_dx(&x, &mu, z, &mut jac[..d * d]);
            contract_sigma_gamma(&jac[..d * d], &sig, d, m, &mut g);
            g.iter()
                .zip(raw_ops.iter_mut())
                .for_each(|(v, acc)| *acc += w * v.abs().powf(pbar));
            tamed.dx_sigma_gamma(&x, &mu, z, &sig, &mut g);
            g.iter()
                .zip(hat_ops.iter_mut())
                .for_each(|(v, acc)| *acc += w * v.abs().powf(pbar));
        }
        let moment_bound = nf.powf(0.25) * scale.powf(pbar);
        record(&mut rows[3], hat_m, c_moment * moment_bound.min(raw_m));
        let op_moment_bound = nf.powf(pbar / 4.0) * scale.powf(pbar);
        for e in 0..m * d {
            record(
                &mut rows[4],
                moments[m * d + e],
                c_moment * op_moment_bound.min(moments[e]),
            );
        }
        moments.fill(0.0);
        for j in 0..marks.len() {
            let w = marks.weight(j);
            let z = marks.atom(j);
            let (raw_ops, hat_ops) = moments.split_at_mut(m * d);
            model.jump_dmu(&x, &mu, &y, z, &mut jac[..d * d]);
            contract_sigma_gamma(&jac[..d * d], &sig_y, d, m, &mut g);
            g.iter()
                .zip(raw_ops.iter_mut())
                .for_each(|(v, acc)| *acc += w * v.abs().powf(pbar));
            tamed.dmu_sigma_gamma(&x, &mu, &y, z, &sig_y, &mut g);
            g.iter()
                .zip(hat_ops.iter_mut())
                .for_each(|(v, acc)| *acc += w * v.abs().powf(pbar));
        }
        for e in 0..m * d {
            record(
                &mut rows[4],
                moments[m * d + e],
                c_moment * op_moment_bound.min(moments[e]),
            );
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MarkMeasure, MeasureDependence};
    use crate::models::{CubicMeanField, CubicParams, LinearParams, MeanFieldOUJump};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_family_example() {
        let v = tame_scalar_family(&[8.0], 1.0, ALPHA_DRIFT, 8).unwrap();
        assert!((v[0] - 1.6).abs() < 1e-15);
        assert_eq!(
            tame_scalar_family(&[0.0], 1.0, ALPHA_DRIFT, 3).unwrap(),
            vec![0.0]
        );
        assert!(tame_scalar_family(&[1.0], 0.0, ALPHA_DRIFT, 3).is_err());
        assert!(tame_scalar_family(&[1.0], 1.0, ALPHA_DRIFT, 0).is_err());
    }

    #[test]
    fn scalar_family_bounds_and_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let f = rng.random_range(-1e6..1e6);
            let scale = rng.random_range(1e-3..1e3);
            let n = rng.random_range(1..100_000);
            let t = tame_scalar_family(&[f], scale, ALPHA_DRIFT, n).unwrap()[0];
            assert!(t.abs() <= f.abs());
            assert!(t.abs() <= (n as f64).powf(ALPHA_DRIFT) * scale * (1.0 + 1e-12));
        }
        let far = tame_scalar_family(&[5.0], 1.0, ALPHA_DRIFT, 1 << 60).unwrap()[0];
        assert!((far - 5.0).abs() < 1e-4);
    }

    #[test]
    fn large_inputs_do_not_overflow() {
        let mut f = [1e300, -1e300];
        let k = tame_in_place(&mut f, 1.0, 1.0, 24.0);
        assert!(k >= 0.0 && f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn identity_mode_is_exact() {
        let model = CubicMeanField::new(CubicParams::default()).unwrap();
        let tamed = make_tamed(&model, 4, TamingMode::Off).unwrap();
        let atoms = [3.0, -2.0];
        let mu = EmpiricalMeasure::new(&atoms[..], 1).unwrap();
        let (mut a, mut b) = ([0.0], [0.0]);
        tamed.drift(&[10.0], &mu, &mut a);
        model.drift(&[10.0], &mu, &mut b);
        assert_eq!(a, b);
        tamed.jump(&[10.0], &mu, &[1.0], &mut a);
        model.jump(&[10.0], &mu, &[1.0], &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn cubic_drift_is_tamed_at_large_states() {
        let model = CubicMeanField::new(CubicParams::default()).unwrap();
        let tamed = make_tamed(&model, 4, TamingMode::On).unwrap();
        let atoms = [0.0];
        let mu = EmpiricalMeasure::new(&atoms[..], 1).unwrap();
        let (mut raw, mut t) = ([0.0], [0.0]);
        model.drift(&[10.0], &mu, &mut raw);
        let k = tamed.drift(&[10.0], &mu, &mut t);
        assert!(raw[0].abs() > 900.0);
        assert!(t[0].abs() <= 4f64.powf(1.0 / 3.0) * 11.0);
        assert!(k < 0.1);
    }

    #[test]
    fn linear_model_taming_is_inactive_at_fine_steps() {
        let model = MeanFieldOUJump::new(LinearParams::default()).unwrap();
        let tamed = make_tamed(&model, 1 << 10, TamingMode::On).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let x = [rng.random_range(-3.0..3.0)];
            let atoms: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mu = EmpiricalMeasure::new(atoms, 1).unwrap();
            let (mut a, mut b) = ([0.0], [0.0]);
            model.drift(&x, &mu, &mut a);
            tamed.drift(&x, &mu, &mut b);
            assert!((a[0] - b[0]).abs() <= 1e-3 * a[0].abs());
            model.diffusion(&x, &mu, &mut a);
            tamed.diffusion(&x, &mu, &mut b);
            assert!((a[0] - b[0]).abs() <= 1e-3 * a[0].abs());
            model.jump(&x, &mu, &[1.0], &mut a);
            tamed.jump(&x, &mu, &[1.0], &mut b);
            assert!((a[0] - b[0]).abs() <= 1e-3 * a[0].abs());
        }
    }

    #[test]
    fn consistency_gap_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let f = rng.random_range(-1e3..1e3);
            let scale = rng.random_range(0.5..50.0);
            let n: usize = rng.random_range(1..5000);
            for (alpha, q) in [
                (ALPHA_DRIFT, 3.0),
                (ALPHA_DIFFUSION, 6.0),
                (1.0 / 24.0, 24.0),
            ] {
                let mut v = [f];
                tame_in_place(&mut v, scale, (n as f64).powf(-alpha), q);
                let bound = f * f / ((n as f64).powf(alpha) * scale);
                assert!((f - v[0]).abs() <= bound * (1.0 + 1e-12) + 1e-300);
            }
        }
    }

    /// `b = +x³` violates the one-sided growth condition.
    struct Explosive(MarkMeasure);

    impl Model for Explosive {
        fn state_dim(&self) -> usize {
            1
        }
        fn noise_dim(&self) -> usize {
            1
        }
        fn marks(&self) -> &MarkMeasure {
            &self.0
        }
        fn eta(&self) -> f64 {
            2.0
        }
        fn pbar(&self) -> f64 {
            6.0
        }
        fn dependence(&self) -> MeasureDependence {
            MeasureDependence::NONE
        }
        fn drift<M: MeasureView>(&self, x: &[f64], _: &M, out: &mut [f64]) {
            out[0] = x[0].powi(3);
        }
        fn diffusion<M: MeasureView>(&self, _: &[f64], _: &M, out: &mut [f64]) {
            out[0] = 1.0;
        }
        fn jump<M: MeasureView>(&self, _: &[f64], _: &M, _: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn drift_dx<M: MeasureView>(&self, x: &[f64], _: &M, out: &mut [f64]) {
            out[0] = 3.0 * x[0] * x[0];
        }
        fn diffusion_dx<M: MeasureView>(&self, _: &[f64], _: &M, out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn jump_dx<M: MeasureView>(&self, _: &[f64], _: &M, _: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn drift_dmu<M: MeasureView>(&self, _: &[f64], _: &M, _: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn diffusion_dmu<M: MeasureView>(&self, _: &[f64], _: &M, _: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn jump_dmu<M: MeasureView>(
            &self,
            _: &[f64],
            _: &M,
            _: &[f64],
            _: &[f64],
            out: &mut [f64],
        ) {
            out[0] = 0.0;
        }
    }

    fn small_spec() -> ProbeSpec {
        ProbeSpec {
            samples: 300,
            ..ProbeSpec::default()
        }
    }

    #[test]
    fn probes_pass_for_shipped_models() {
        let linear = MeanFieldOUJump::new(LinearParams::default()).unwrap();
        let report = probe_assumptions(&linear, &small_spec()).unwrap();
        assert!(report.passed(), "{:?}", report.flagged);
        let cubic = CubicMeanField::new(CubicParams::default()).unwrap();
        let report = probe_assumptions(&cubic, &small_spec()).unwrap();
        assert!(report.passed(), "{:?}", report.flagged);
        assert!(report.max_for(GROWTH).is_finite());
    }

    #[test]
    fn injected_violation_is_flagged() {
        let model = Explosive(MarkMeasure::none(1));
        let report = probe_assumptions(&model, &small_spec()).unwrap();
        assert!(report.flagged.iter().any(|f| f == GROWTH));
    }

    #[test]
    fn probe_csv_has_schema_line() {
        let linear = MeanFieldOUJump::new(LinearParams::default()).unwrap();
        let spec = ProbeSpec {
            samples: 20,
            ..ProbeSpec::default()
        };
        let report = probe_assumptions(&linear, &spec).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(crate::output::SCHEMA_LINE));
        assert!(lines.next().unwrap().starts_with("assumption,n,"));
        assert_eq!(lines.count(), report.rows.len());
    }
}
