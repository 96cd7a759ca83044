//! Tamed Euler and tamed Milstein-type steppers for the particle system.
//!
//! All coefficients are frozen at the left end of the step. The Milstein
//! corrections are assembled from the frozen operator products and the
//! iterated integrals of the step, and from coefficient differences at the
//! jump times of the step.

use rayon::prelude::*;

use crate::config::{RunConfig, SchemeKind};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::measure::{EmpiricalMeasure, ShiftedMeasure};
use crate::model::{MeasureDependence, Model};
use crate::noise::{NoiseRealization, NoiseSpec, ResolutionView, StepNoise};
use crate::taming::{make_tamed, TamedModel};

/// States beyond this norm count as a blow-up.
pub const BLOW_UP_THRESHOLD: f64 = 1e9;

/// Particles per parallel task.
const MIN_CHUNK: usize = 64;

/// A drift evaluation counts as tamed when taming removes more than 1%.
const ACTIVE_FACTOR: f64 = 0.99;

/// Which Milstein corrections to add on top of the Euler part.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Corrections {
    pub sigma: bool,
    pub gamma: bool,
}

impl Corrections {
    pub const NONE: Self = Self {
        sigma: false,
        gamma: false,
    };
    pub const ALL: Self = Self {
        sigma: true,
        gamma: true,
    };

    pub fn for_scheme(kind: SchemeKind) -> Self {
        match kind {
            SchemeKind::Euler => Self::NONE,
            SchemeKind::Milstein => Self::ALL,
        }
    }
}

/// Per-step summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub max_abs: f64,
    /// Fraction of particles whose drift was tamed by more than 1%.
    pub taming_activity: f64,
    pub jumps: usize,
    /// Particles that blew up during this step.
    pub new_blow_ups: usize,
}

/// Whether the corrections need substep data for iterated integrals.
pub fn needs_substeps<T: Model>(model: &T, corrections: Corrections) -> bool {
    corrections.sigma && (model.noise_dim() > 1 || model.dependence().diffusion)
}

/// Whether every path must be refined at every system jump time.
pub fn needs_global_splits(dep: MeasureDependence) -> bool {
    dep.diffusion || dep.jump
}

/// The noise layout a model needs for a run.
pub fn noise_spec_for<T: Model>(model: &T, cfg: &RunConfig, n_max: usize) -> NoiseSpec {
    NoiseSpec::from_run(
        cfg,
        model.state_dim(),
        model.noise_dim(),
        n_max,
        needs_global_splits(model.dependence()),
    )
}

/// Values frozen at the left end of a step.
struct Frozen<'s> {
    np: usize,
    d: usize,
    m: usize,
    x: &'s [f64],
    mu: EmpiricalMeasure<'s>,
    dep: MeasureDependence,
    drift: Vec<f64>,
    drift_factor: Vec<f64>,
    sig_raw: Vec<f64>,
    sig: Vec<f64>,
    comp: Vec<f64>,
    /// `γ̂(x_k, μ, z)` for each jump of the step.
    deltas: Vec<f64>,
    /// Local jump indices sorted by (particle, time).
    by_particle: Vec<usize>,
}

impl<'s> Frozen<'s> {
    fn new<T: Model>(
        tamed: &TamedModel<'_, T>,
        x: &'s [f64],
        step: &StepNoise<'_, '_>,
    ) -> Result<Self> {
        let model = tamed.base();
        let (d, m) = (model.state_dim(), model.noise_dim());
        if x.is_empty() || !x.len().is_multiple_of(d) {
            return Err(Error::domain(
                "state length is not a multiple of the dimension",
            ));
        }
        let np = x.len() / d;
        let mu = EmpiricalMeasure::new_unchecked(x, d);
        let mut drift = vec![0.0; np * d];
        let mut drift_factor = vec![1.0; np];
        let mut sig_raw = vec![0.0; np * d * m];
        let mut sig = vec![0.0; np * d * m];
        let mut comp = vec![0.0; np * d];
        drift
            .par_chunks_mut(d)
            .zip(drift_factor.par_iter_mut())
            .zip(sig_raw.par_chunks_mut(d * m))
            .zip(sig.par_chunks_mut(d * m))
            .zip(comp.par_chunks_mut(d))
            .with_min_len(MIN_CHUNK)
            .enumerate()
            .for_each(|(i, ((((b, k), sr), s), c))| {
                let xi = &x[i * d..(i + 1) * d];
                *k = tamed.drift(xi, &mu, b);
                model.diffusion(xi, &mu, sr);
                s.copy_from_slice(sr);
                tamed.tame_diffusion_value(xi, s);
                tamed.jump_compensator(xi, &mu, c);
            });
        let jumps = step.jumps();
        let marks = model.marks();
        let mut deltas = vec![0.0; jumps.len() * d];
        for (e, ev) in jumps.iter().enumerate() {
            if ev.particle >= np {
                return Err(Error::config("jump event refers to a missing particle"));
            }
            let xk = &x[ev.particle * d..(ev.particle + 1) * d];
            tamed.jump(
                xk,
                &mu,
                marks.atom(ev.mark),
                &mut deltas[e * d..(e + 1) * d],
            );
        }
        let mut by_particle: Vec<usize> = (0..jumps.len()).collect();
        by_particle.sort_by_key(|&e| (jumps[e].particle, e));
        Ok(Self {
            np,
            d,
            m,
            x,
            mu,
            dep: model.dependence(),
            drift,
            drift_factor,
            sig_raw,
            sig,
            comp,
            deltas,
            by_particle,
        })
    }

    fn xi(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    fn delta(&self, e: usize) -> &[f64] {
        &self.deltas[e * self.d..(e + 1) * self.d]
    }

    /// Local indices of the jumps of particle `i`, in time order.
    fn own_jumps(&self, step: &StepNoise<'_, '_>, i: usize) -> &[usize] {
        let jumps = step.jumps();
        let lo = self.by_particle.partition_point(|&e| jumps[e].particle < i);
        let hi = self
            .by_particle
            .partition_point(|&e| jumps[e].particle <= i);
        &self.by_particle[lo..hi]
    }

    /// The measure after jump `e`.
    fn shifted(&self, step: &StepNoise<'_, '_>, e: usize) -> ShiftedMeasure<'_> {
        ShiftedMeasure::new_unchecked(&self.mu, step.jumps()[e].particle, self.delta(e))
    }

    fn euler_part(&self, step: &StepNoise<'_, '_>, i: usize, out: &mut [f64]) {
        let (d, m, h) = (self.d, self.m, step.h());
        let xi = self.xi(i);
        let b = &self.drift[i * d..(i + 1) * d];
        let s = &self.sig[i * d * m..(i + 1) * d * m];
        let c = &self.comp[i * d..(i + 1) * d];
        let dw = step.dw(i);
        for u in 0..d {
            let mut acc = xi[u] + b[u] * h;
            for l in 0..m {
                acc += s[u * m + l] * dw[l];
            }
            out[u] = acc;
        }
        for &e in self.own_jumps(step, i) {
            for (o, g) in out.iter_mut().zip(self.delta(e)) {
                *o += g;
            }
        }
        for u in 0..d {
            out[u] -= h * c[u];
        }
    }
}

/// Per-task buffers for the corrections.
struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    y: Vec<f64>,
    iter: Vec<f64>,
    marks_dx: Vec<f64>,
    base_jump: Vec<f64>,
    acc: Vec<f64>,
    g: Vec<f64>,
}

impl Scratch {
    fn new(d: usize, m: usize, marks: usize) -> Self {
        Self {
            a: vec![0.0; d * m * m],
            b: vec![0.0; d * m * m],
            c: vec![0.0; d * m],
            y: vec![0.0; d.max(m)],
            iter: vec![0.0; m * m],
            marks_dx: vec![0.0; marks * m * d],
            base_jump: vec![0.0; marks * d],
            acc: vec![0.0; marks * d],
            g: vec![0.0; marks * d],
        }
    }
}

fn check_substeps<T: Model>(tamed: &TamedModel<'_, T>, step: &StepNoise<'_, '_>) -> Result<()> {
    if needs_substeps(tamed.base(), Corrections::ALL) && step_substeps(step) == 0 {
        return Err(Error::config(
            "the diffusion corrections need iterated integrals: build the noise view with substeps",
        ));
    }
    Ok(())
}

fn step_substeps(step: &StepNoise<'_, '_>) -> usize {
    step.view().substeps()
}

/// `σ̂₁ + σ̂₂` contribution of particle `i`, added to `out`.
fn sigma_correction<T: Model>(
    tamed: &TamedModel<'_, T>,
    fr: &Frozen<'_>,
    step: &StepNoise<'_, '_>,
    i: usize,
    s: &mut Scratch,
    out: &mut [f64],
) {
    let (d, m, np) = (fr.d, fr.m, fr.np);
    let xi = fr.xi(i);
    let sig_i = &fr.sig_raw[i * d * m..(i + 1) * d * m];

    // frozen operator times the self iterated integral
    tamed.dx_sigma_sigma(xi, &fr.mu, sig_i, &mut s.a);
    step.iterated(i, &mut s.iter);
    for u in 0..d {
        let mut acc = 0.0;
        for l1 in 0..m {
            for l in 0..m {
                acc += s.a[(l1 * d + u) * m + l] * s.iter[l1 * m + l];
            }
        }
        out[u] += acc;
    }

    if fr.dep.diffusion {
        let inv = 1.0 / np as f64;
        s.c.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..np {
            let sig_k = &fr.sig_raw[k * d * m..(k + 1) * d * m];
            tamed.dmu_sigma_sigma(xi, &fr.mu, fr.xi(k), sig_k, &mut s.a);
            step.cross(k, i, &mut s.iter);
            for u in 0..d {
                for l1 in 0..m {
                    for l in 0..m {
                        s.c[u] += s.a[(l1 * d + u) * m + l] * s.iter[l1 * m + l];
                    }
                }
            }
        }
        for u in 0..d {
            out[u] += inv * s.c[u];
        }
    }

    // coefficient jumps times the Brownian increment after the jump
    let jumps = step.jumps();
    let sig_hat_i = &fr.sig[i * d * m..(i + 1) * d * m];
    let dw = step.dw(i);
    for (e, ev) in jumps.iter().enumerate() {
        let own = ev.particle == i;
        if !own && !fr.dep.diffusion {
            continue;
        }
        let y = &mut s.y[..d];
        y.copy_from_slice(xi);
        if own {
            y.iter_mut().zip(fr.delta(e)).for_each(|(a, g)| *a += g);
        }
        let after = &mut s.b[..d * m];
        if fr.dep.diffusion {
            tamed.diffusion(y, &fr.shifted(step, e), after);
        } else {
            tamed.diffusion(y, &fr.mu, after);
        }
        let disp = &mut s.c[..m];
        step.displacement(i, step.first_jump() + e, disp);
        for u in 0..d {
            let mut acc = 0.0;
            for l in 0..m {
                acc += (after[u * m + l] - sig_hat_i[u * m + l]) * (dw[l] - disp[l]);
            }
            out[u] += acc;
        }
    }
}

/// Compensated `γ̂₁ + γ̂₂` contribution of particle `i`, added to `out`.
fn gamma_correction<T: Model>(
    tamed: &TamedModel<'_, T>,
    fr: &Frozen<'_>,
    step: &StepNoise<'_, '_>,
    i: usize,
    s: &mut Scratch,
    out: &mut [f64],
) {
    let model = tamed.base();
    let marks = model.marks();
    let nm = marks.len();
    if nm == 0 {
        return;
    }
    let (d, m, np) = (fr.d, fr.m, fr.np);
    let inv = 1.0 / np as f64;
    let xi = fr.xi(i);
    let sig_i = &fr.sig_raw[i * d * m..(i + 1) * d * m];
    let ji = step.time_integral(i);
    let jumps = step.jumps();
    let first = step.first_jump();

    // γ̂₁: frozen operators, per mark atom
    for j in 0..nm {
        let dx = &mut s.marks_dx[j * m * d..(j + 1) * m * d];
        tamed.dx_sigma_gamma(xi, &fr.mu, marks.atom(j), sig_i, dx);
        let w = marks.weight(j);
        for u in 0..d {
            let mut acc = 0.0;
            for l1 in 0..m {
                acc += dx[l1 * d + u] * ji[l1];
            }
            out[u] -= w * acc;
        }
    }
    let own = fr.own_jumps(step, i);
    for &e in own {
        let dx = &s.marks_dx[jumps[e].mark * m * d..(jumps[e].mark + 1) * m * d];
        let disp = &mut s.c[..m];
        step.displacement(i, first + e, disp);
        for u in 0..d {
            let mut acc = 0.0;
            for l1 in 0..m {
                acc += dx[l1 * d + u] * disp[l1];
            }
            out[u] += acc;
        }
    }
    if fr.dep.jump {
        let mut op = vec![0.0; m * d];
        let mut disp = vec![0.0; m];
        for k in 0..np {
            let sig_k = &fr.sig_raw[k * d * m..(k + 1) * d * m];
            let jk = step.time_integral(k);
            for j in 0..nm {
                tamed.dmu_sigma_gamma(xi, &fr.mu, fr.xi(k), marks.atom(j), sig_k, &mut op);
                let w = marks.weight(j);
                for u in 0..d {
                    let mut acc = 0.0;
                    for l1 in 0..m {
                        acc += op[l1 * d + u] * jk[l1];
                    }
                    out[u] -= w * inv * acc;
                }
            }
            for &e in own {
                let ev = jumps[e];
                tamed.dmu_sigma_gamma(xi, &fr.mu, fr.xi(k), marks.atom(ev.mark), sig_k, &mut op);
                step.displacement(k, first + e, &mut disp);
                for u in 0..d {
                    let mut acc = 0.0;
                    for l1 in 0..m {
                        acc += op[l1 * d + u] * disp[l1];
                    }
                    out[u] += inv * acc;
                }
            }
        }
    }

    // γ̂₂: coefficient jumps accumulated in time order
    let any_affecting = fr.dep.jump || !own.is_empty();
    if !any_affecting {
        return;
    }
    for j in 0..nm {
        tamed.jump(
            xi,
            &fr.mu,
            marks.atom(j),
            &mut s.base_jump[j * d..(j + 1) * d],
        );
    }
    s.acc.iter_mut().for_each(|v| *v = 0.0);
    let t_end = step.end();
    for (e, ev) in jumps.iter().enumerate() {
        let is_own = ev.particle == i;
        if is_own {
            let a = &s.acc[ev.mark * d..(ev.mark + 1) * d];
            out.iter_mut().zip(a).for_each(|(o, v)| *o += v);
        }
        if !is_own && !fr.dep.jump {
            continue;
        }
        let y = &mut s.y[..d];
        y.copy_from_slice(xi);
        if is_own {
            y.iter_mut().zip(fr.delta(e)).for_each(|(a, g)| *a += g);
        }
        let rest = t_end - ev.time;
        for j in 0..nm {
            let g = &mut s.g[j * d..(j + 1) * d];
            if fr.dep.jump {
                tamed.jump(y, &fr.shifted(step, e), marks.atom(j), g);
            } else {
                tamed.jump(y, &fr.mu, marks.atom(j), g);
            }
            let w = marks.weight(j);
            for u in 0..d {
                let diff = g[u] - s.base_jump[j * d + u];
                s.acc[j * d + u] += diff;
                out[u] -= rest * w * diff;
            }
        }
    }
}

fn corrections_into<T: Model>(
    tamed: &TamedModel<'_, T>,
    fr: &Frozen<'_>,
    step: &StepNoise<'_, '_>,
    which: Corrections,
    out: &mut [f64],
) {
    let (d, m) = (fr.d, fr.m);
    let nm = tamed.base().marks().len();
    out.par_chunks_mut(d)
        .with_min_len(MIN_CHUNK)
        .enumerate()
        .for_each_init(
            || Scratch::new(d, m, nm),
            |s, (i, o)| {
                o.iter_mut().for_each(|v| *v = 0.0);
                if which.sigma {
                    sigma_correction(tamed, fr, step, i, s, o);
                }
                if which.gamma {
                    gamma_correction(tamed, fr, step, i, s, o);
                }
            },
        );
}

/// `x + b̂h + σ̂Δw + Σ γ̂ − h γ̂_ν` for every particle.
pub fn euler_step<T: Model>(
    tamed: &TamedModel<'_, T>,
    x: &[f64],
    step: &StepNoise<'_, '_>,
    out: &mut [f64],
) -> Result<()> {
    milstein_step(tamed, x, step, Corrections::NONE, out)
}

/// `σ̂₁ + σ̂₂` contributions to the Brownian integral, `N × d`.
pub fn milstein_sigma_corrections<T: Model>(
    tamed: &TamedModel<'_, T>,
    x: &[f64],
    step: &StepNoise<'_, '_>,
) -> Result<Vec<f64>> {
    check_substeps(tamed, step)?;
    let fr = Frozen::new(tamed, x, step)?;
    let mut out = vec![0.0; x.len()];
    corrections_into(
        tamed,
        &fr,
        step,
        Corrections {
            sigma: true,
            gamma: false,
        },
        &mut out,
    );
    Ok(out)
}

/// Compensated `γ̂₁ + γ̂₂` contributions, `N × d`.
pub fn milstein_gamma_corrections<T: Model>(
    tamed: &TamedModel<'_, T>,
    x: &[f64],
    step: &StepNoise<'_, '_>,
) -> Result<Vec<f64>> {
    let fr = Frozen::new(tamed, x, step)?;
    let mut out = vec![0.0; x.len()];
    corrections_into(
        tamed,
        &fr,
        step,
        Corrections {
            sigma: false,
            gamma: true,
        },
        &mut out,
    );
    Ok(out)
}

/// One step of the scheme. With `Corrections::NONE` this is the tamed
/// Euler step, bit for bit.
pub fn milstein_step<T: Model>(
    tamed: &TamedModel<'_, T>,
    x: &[f64],
    step: &StepNoise<'_, '_>,
    which: Corrections,
    out: &mut [f64],
) -> Result<()> {
    step_with_diagnostics(tamed, x, step, which, None, out).map(|_| ())
}

fn step_with_diagnostics<T: Model>(
    tamed: &TamedModel<'_, T>,
    x: &[f64],
    step: &StepNoise<'_, '_>,
    which: Corrections,
    blown: Option<&mut [bool]>,
    out: &mut [f64],
) -> Result<StepDiagnostics> {
    if out.len() != x.len() {
        return Err(Error::domain("output buffer has the wrong length"));
    }
    if which.sigma {
        check_substeps(tamed, step)?;
    }
    let fr = Frozen::new(tamed, x, step)?;
    let d = fr.d;
    out.par_chunks_mut(d)
        .with_min_len(MIN_CHUNK)
        .enumerate()
        .for_each(|(i, o)| fr.euler_part(step, i, o));
    if which.sigma || which.gamma {
        let mut corr = vec![0.0; x.len()];
        corrections_into(tamed, &fr, step, which, &mut corr);
        out.iter_mut().zip(&corr).for_each(|(o, c)| *o += c);
    }

    let mut new_blow_ups = 0;
    let mut local = vec![false; fr.np];
    let flags: &mut [bool] = match blown {
        Some(b) => b,
        None => &mut local,
    };
    let mut max_abs: f64 = 0.0;
    let mut active = 0usize;
    for i in 0..fr.np {
        let o = &mut out[i * d..(i + 1) * d];
        if flags[i] {
            o.copy_from_slice(fr.xi(i));
            continue;
        }
        let norm = o.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > BLOW_UP_THRESHOLD {
            flags[i] = true;
            new_blow_ups += 1;
            o.copy_from_slice(fr.xi(i));
            continue;
        }
        max_abs = max_abs.max(norm);
        if fr.drift_factor[i] < ACTIVE_FACTOR {
            active += 1;
        }
    }
    Ok(StepDiagnostics {
        max_abs,
        taming_activity: active as f64 / fr.np as f64,
        jumps: step.jumps().len(),
        new_blow_ups,
    })
}

/// What [`simulate`] keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Record {
    FinalOnly,
    Path,
}

/// Output of one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: Grid,
    particles: usize,
    dim: usize,
    /// `(n + 1) × N × d` for a full path, `N × d` otherwise.
    states: Vec<f64>,
    record: Record,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Particles frozen after a blow-up.
    pub blown: Vec<bool>,
}

impl Trajectory {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn final_state(&self) -> &[f64] {
        let len = self.particles * self.dim;
        &self.states[self.states.len() - len..]
    }

    /// States at grid point `k`; only available for full paths.
    pub fn state_at(&self, k: usize) -> Option<&[f64]> {
        let len = self.particles * self.dim;
        match self.record {
            Record::Path if k <= self.grid.steps() => Some(&self.states[k * len..(k + 1) * len]),
            Record::FinalOnly if k == self.grid.steps() => Some(self.final_state()),
            _ => None,
        }
    }

    pub fn blow_ups(&self) -> usize {
        self.blown.iter().filter(|b| **b).count()
    }
}

/// Runs the scheme at resolution `n` on a realization.
pub fn simulate<T: Model>(
    model: &T,
    cfg: &RunConfig,
    n: usize,
    real: &NoiseRealization,
    record: Record,
) -> Result<Trajectory> {
    cfg.validate()?;
    let spec = real.spec();
    if spec.particles != cfg.particles {
        return Err(Error::config(format!(
            "realization has {} particles, run asks for {}",
            spec.particles, cfg.particles
        )));
    }
    if spec.state_dim != model.state_dim() || spec.noise_dim != model.noise_dim() {
        return Err(Error::config(
            "realization dimensions do not match the model",
        ));
    }
    if spec.horizon != cfg.grid.horizon() {
        return Err(Error::config("realization horizon does not match the run"));
    }
    if needs_global_splits(model.dependence()) && !spec.split_all && !real.jumps().is_empty() {
        return Err(Error::config(
            "measure-dependent diffusion or jump coefficients need every path refined at every jump",
        ));
    }
    let which = Corrections::for_scheme(cfg.scheme);
    let substeps = if needs_substeps(model, which) {
        cfg.substeps
    } else {
        0
    };
    let view = ResolutionView::new(real, n, substeps)?;
    let tamed = make_tamed(model, n, cfg.taming)?;

    let len = real.initial().len();
    let mut x = real.initial().to_vec();
    let mut next = vec![0.0; len];
    let mut states = Vec::with_capacity(match record {
        Record::Path => (n + 1) * len,
        Record::FinalOnly => len,
    });
    if record == Record::Path {
        states.extend_from_slice(&x);
    }
    let mut blown = vec![false; cfg.particles];
    let mut diagnostics = Vec::with_capacity(n);
    for k in 0..n {
        let step = view.step(k);
        let diag = step_with_diagnostics(&tamed, &x, &step, which, Some(&mut blown), &mut next)?;
        diagnostics.push(diag);
        std::mem::swap(&mut x, &mut next);
        if record == Record::Path {
            states.extend_from_slice(&x);
        }
    }
    if record == Record::FinalOnly {
        states.extend_from_slice(&x);
    }
    Ok(Trajectory {
        grid: *view.grid(),
        particles: cfg.particles,
        dim: model.state_dim(),
        states,
        record,
        diagnostics,
        blown,
    })
}
