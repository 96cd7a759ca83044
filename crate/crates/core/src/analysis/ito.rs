//! Monte Carlo check of Itô's formula for the particle system.
//!
//! For a tagged particle `i`, `E[F(x_t^i, μ_t)] − F(x_0^i, μ_0)` is compared
//! with the expected time integral of the generator, both along the same
//! simulated paths. The generator includes the Lions-derivative terms and the
//! jump terms of every particle.

use crate::analysis::map_runs;
use crate::analysis::stats::MeanEstimate;
use crate::config::{RunConfig, TamingMode};
use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, LionsFunction, MeasureView};
use crate::model::Model;
use crate::noise::{sample_realization, NoiseRealization, ResolutionView, StepNoise};
use crate::schemes::{noise_spec_for, simulate, Record, Trajectory};
use crate::seed::SeedSequence;

/// A function `F(x, μ)` with the derivatives the formula needs.
///
/// Matrix outputs are `d × d` row-major. `dx_dmu` writes
/// `∂_{x_u} (∂_μ F)_v` at `[u * d + v]`, `dy_dmu` writes `∂_{y_v} (∂_μ F)_u`
/// at `[u * d + v]`, `dmu2` writes `∂_μ(∂_μ F)_v(y)_u` at `[u * d + v]`.
/// Missing derivatives report [`Error::MissingDerivative`].
pub trait TestFunction: Sync {
    fn value<M: MeasureView>(&self, x: &[f64], mu: &M) -> f64;

    fn dx<M: MeasureView>(&self, _x: &[f64], _mu: &M, _out: &mut [f64]) -> Result<()> {
        Err(Error::MissingDerivative("dx"))
    }
    fn dxx<M: MeasureView>(&self, _x: &[f64], _mu: &M, _out: &mut [f64]) -> Result<()> {
        Err(Error::MissingDerivative("dxx"))
    }
    fn dmu<M: MeasureView>(&self, _x: &[f64], _mu: &M, _y: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::MissingDerivative("dmu"))
    }
    fn dx_dmu<M: MeasureView>(
        &self,
        _x: &[f64],
        _mu: &M,
        _y: &[f64],
        _out: &mut [f64],
    ) -> Result<()> {
        Err(Error::MissingDerivative("dx_dmu"))
    }
    fn dy_dmu<M: MeasureView>(
        &self,
        _x: &[f64],
        _mu: &M,
        _y: &[f64],
        _out: &mut [f64],
    ) -> Result<()> {
        Err(Error::MissingDerivative("dy_dmu"))
    }
    fn dmu2<M: MeasureView>(
        &self,
        _x: &[f64],
        _mu: &M,
        _y: &[f64],
        _y2: &[f64],
        _out: &mut [f64],
    ) -> Result<()> {
        Err(Error::MissingDerivative("dmu2"))
    }
}

/// `F(x, μ) = |x|² + |mean(μ)|²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticMean;

impl TestFunction for QuadraticMean {
    fn value<M: MeasureView>(&self, x: &[f64], mu: &M) -> f64 {
        let xs: f64 = x.iter().map(|v| v * v).sum();
        let ms: f64 = (0..mu.dim()).map(|u| mu.mean(u).powi(2)).sum();
        xs + ms
    }

    fn dx<M: MeasureView>(&self, x: &[f64], _mu: &M, out: &mut [f64]) -> Result<()> {
        for (o, v) in out.iter_mut().zip(x) {
            *o = 2.0 * v;
        }
        Ok(())
    }

    fn dxx<M: MeasureView>(&self, x: &[f64], _mu: &M, out: &mut [f64]) -> Result<()> {
        identity(x.len(), 2.0, out);
        Ok(())
    }

    fn dmu<M: MeasureView>(&self, _x: &[f64], mu: &M, _y: &[f64], out: &mut [f64]) -> Result<()> {
        for (u, o) in out.iter_mut().enumerate() {
            *o = 2.0 * mu.mean(u);
        }
        Ok(())
    }

    fn dx_dmu<M: MeasureView>(
        &self,
        _x: &[f64],
        _mu: &M,
        _y: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }

    fn dy_dmu<M: MeasureView>(
        &self,
        _x: &[f64],
        _mu: &M,
        _y: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }

    fn dmu2<M: MeasureView>(
        &self,
        x: &[f64],
        _mu: &M,
        _y: &[f64],
        _y2: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        identity(x.len(), 2.0, out);
        Ok(())
    }
}

impl LionsFunction for QuadraticMean {
    fn value<M: MeasureView>(&self, z: &[f64], mu: &M) -> f64 {
        TestFunction::value(self, z, mu)
    }

    fn lions_derivative<M: MeasureView>(&self, _z: &[f64], mu: &M, _y: &[f64], out: &mut [f64]) {
        for (u, o) in out.iter_mut().enumerate() {
            *o = 2.0 * mu.mean(u);
        }
    }
}

fn identity(d: usize, scale: f64, out: &mut [f64]) {
    out.fill(0.0);
    for u in 0..d {
        out[u * d + u] = scale;
    }
}

/// Settings beyond the run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ItoSpec {
    /// Particles `0..tagged` are checked in every run.
    pub tagged: usize,
    pub steps: usize,
}

/// Run-level estimates, each averaged over the tagged particles.
#[derive(Debug, Clone, PartialEq)]
pub struct ItoReport {
    pub steps: usize,
    /// `F(x_t, μ_t) − F(x_0, μ_0)`.
    pub direct: MeanEstimate,
    /// Time integral of the generator.
    pub formula: MeanEstimate,
    /// Paired `direct − formula`.
    pub difference: MeanEstimate,
    /// `direct − formula` minus a discrete martingale built from the same
    /// increments; same mean up to discretization, far smaller variance.
    pub residual: MeanEstimate,
}

impl ItoReport {
    /// `|difference| < k · SE`.
    pub fn agrees(&self, k: f64) -> bool {
        self.difference.mean.abs() < k * self.difference.se
    }

    pub fn summary(&self) -> String {
        format!(
            "n = {}: direct {:.6e} ± {:.2e}, formula {:.6e} ± {:.2e}, difference {:.3e} ± {:.2e}, residual {:.3e} ± {:.2e}\n",
            self.steps,
            self.direct.mean,
            self.direct.se,
            self.formula.mean,
            self.formula.se,
            self.difference.mean,
            self.difference.se,
            self.residual.mean,
            self.residual.se
        )
    }
}

/// Reports at `n` and `2n` on shared noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ItoRefinement {
    pub coarse: ItoReport,
    pub fine: ItoReport,
    /// Paired run-level `residual(n) − 2 residual(2n)`.
    pub halving_gap: MeanEstimate,
}

impl ItoRefinement {
    /// `residual(n)` is resolved away from zero and `2 residual(2n)` matches
    /// it within `k` standard errors.
    pub fn halves(&self, k: f64) -> bool {
        self.coarse.residual.mean.abs() > k * self.coarse.residual.se
            && self.halving_gap.mean.abs() < k * self.halving_gap.se
    }

    /// `residual(n) / residual(2n)`.
    pub fn ratio(&self) -> f64 {
        self.coarse.residual.mean / self.fine.residual.mean
    }
}

fn check_derivatives<F: TestFunction>(f: &F, d: usize) -> Result<()> {
    let x = vec![0.5; d];
    let atoms = vec![0.25; 2 * d];
    let mu = EmpiricalMeasure::new_unchecked(&atoms[..], d);
    let mut v = vec![0.0; d];
    let mut m = vec![0.0; d * d];
    let probes = [
        f.dx(&x, &mu, &mut v),
        f.dxx(&x, &mu, &mut m),
        f.dmu(&x, &mu, &x, &mut v),
        f.dx_dmu(&x, &mu, &x, &mut m),
        f.dy_dmu(&x, &mu, &x, &mut m),
        f.dmu2(&x, &mu, &x, &x, &mut m),
    ];
    for p in probes {
        match p {
            Err(Error::MissingDerivative(name)) => {
                return Err(Error::config(format!(
                    "test function does not provide {name}"
                )))
            }
            other => other?,
        }
    }
    Ok(())
}

fn check_inputs<T: Model, F: TestFunction>(
    model: &T,
    f: &F,
    cfg: &RunConfig,
    spec: ItoSpec,
) -> Result<()> {
    cfg.validate()?;
    if spec.tagged == 0 || spec.tagged > cfg.particles {
        return Err(Error::config(
            "tagged particle count must be between 1 and N",
        ));
    }
    if spec.steps == 0 {
        return Err(Error::config("steps must be positive"));
    }
    if cfg.taming == TamingMode::On {
        return Err(Error::config(
            "Itô verification compares against the untamed generator; set taming off",
        ));
    }
    check_derivatives(f, model.state_dim())
}

/// Verifies Itô's formula at `spec.steps` steps on `cfg.runs` runs.
pub fn ito_verify<T: Model, F: TestFunction>(
    model: &T,
    f: &F,
    cfg: &RunConfig,
    spec: ItoSpec,
) -> Result<ItoReport> {
    check_inputs(model, f, cfg, spec)?;
    let noise = noise_spec_for(model, cfg, spec.steps);
    let seeds = SeedSequence::new(cfg.seed);
    let rows = map_runs(cfg.threads, cfg.runs, |run| {
        let real = sample_realization(&noise, model.marks(), &seeds, run)?;
        path_terms(model, f, cfg, &real, spec.steps, spec.tagged)
    })?;
    Ok(report(spec.steps, &rows))
}

/// Verifies at `spec.steps` and twice that on shared noise.
pub fn ito_refinement<T: Model, F: TestFunction>(
    model: &T,
    f: &F,
    cfg: &RunConfig,
    spec: ItoSpec,
) -> Result<ItoRefinement> {
    check_inputs(model, f, cfg, spec)?;
    let fine_steps = 2 * spec.steps;
    let noise = noise_spec_for(model, cfg, fine_steps);
    let seeds = SeedSequence::new(cfg.seed);
    let rows = map_runs(cfg.threads, cfg.runs, |run| {
        let real = sample_realization(&noise, model.marks(), &seeds, run)?;
        Ok((
            path_terms(model, f, cfg, &real, spec.steps, spec.tagged)?,
            path_terms(model, f, cfg, &real, fine_steps, spec.tagged)?,
        ))
    })?;
    let coarse: Vec<[f64; 4]> = rows.iter().map(|r| r.0).collect();
    let fine: Vec<[f64; 4]> = rows.iter().map(|r| r.1).collect();
    let gap: Vec<f64> = rows.iter().map(|r| r.0[3] - 2.0 * r.1[3]).collect();
    Ok(ItoRefinement {
        coarse: report(spec.steps, &coarse),
        fine: report(fine_steps, &fine),
        halving_gap: MeanEstimate::from_samples(&gap),
    })
}

fn report(steps: usize, rows: &[[f64; 4]]) -> ItoReport {
    let col = |j: usize| MeanEstimate::from_samples(&rows.iter().map(|r| r[j]).collect::<Vec<_>>());
    ItoReport {
        steps,
        direct: col(0),
        formula: col(1),
        difference: col(2),
        residual: col(3),
    }
}

/// Coefficients of every particle at one grid point.
struct Frame {
    drift: Vec<f64>,
    /// `σσ*` per particle, `d × d`.
    cov: Vec<f64>,
    /// `γ(x_k, μ, z_j)` at `[(k * marks + j) * d + u]`.
    jumps: Vec<f64>,
    comp: Vec<f64>,
    sigma: Vec<f64>,
}

fn frame<T: Model>(model: &T, x: &[f64], mu: &EmpiricalMeasure) -> Frame {
    let (d, m) = (model.state_dim(), model.noise_dim());
    let marks = model.marks();
    let np = x.len() / d;
    let mut fr = Frame {
        drift: vec![0.0; np * d],
        cov: vec![0.0; np * d * d],
        jumps: vec![0.0; np * marks.len() * d],
        comp: vec![0.0; np * d],
        sigma: vec![0.0; np * d * m],
    };
    for k in 0..np {
        let xk = &x[k * d..(k + 1) * d];
        model.drift(xk, mu, &mut fr.drift[k * d..(k + 1) * d]);
        let sig = &mut fr.sigma[k * d * m..(k + 1) * d * m];
        model.diffusion(xk, mu, sig);
        let cov = &mut fr.cov[k * d * d..(k + 1) * d * d];
        for u in 0..d {
            for v in 0..d {
                cov[u * d + v] = (0..m).map(|l| sig[u * m + l] * sig[v * m + l]).sum();
            }
        }
        for j in 0..marks.len() {
            let g = &mut fr.jumps[(k * marks.len() + j) * d..(k * marks.len() + j + 1) * d];
            model.jump(xk, mu, marks.atom(j), g);
            for u in 0..d {
                fr.comp[k * d + u] += marks.weight(j) * g[u];
            }
        }
    }
    fr
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Brownian part of particle `i`'s step around its own jump `e`:
/// `σ(x) δ + σ(x + γ) (Δw − δ) + (∂ₓγ σ)(x) δ` with `δ = w_τ − w_{t_k}`.
#[allow(clippy::too_many_arguments)]
fn own_increment<T: Model>(
    model: &T,
    xi: &[f64],
    mu: &EmpiricalMeasure,
    fr: &Frame,
    i: usize,
    mark: usize,
    step: &StepNoise<'_, '_>,
    global: usize,
    out: &mut [f64],
) {
    let (d, m) = (model.state_dim(), model.noise_dim());
    let nm = model.marks().len();
    let g = &fr.jumps[(i * nm + mark) * d..(i * nm + mark + 1) * d];
    let sig = &fr.sigma[i * d * m..(i + 1) * d * m];
    let mut disp = vec![0.0; m];
    step.displacement(i, global, &mut disp);
    let moved: Vec<f64> = xi.iter().zip(g).map(|(a, b)| a + b).collect();
    let mut after = vec![0.0; d * m];
    model.diffusion(&moved, mu, &mut after);
    let mut jac = vec![0.0; d * d];
    model.jump_dx(xi, mu, model.marks().atom(mark), &mut jac);
    let dw = step.dw(i);
    for u in 0..d {
        let mut acc = 0.0;
        for l in 0..m {
            let dsig: f64 = (0..d).map(|v| jac[u * d + v] * sig[v * m + l]).sum();
            acc += (sig[u * m + l] + dsig) * disp[l] + after[u * m + l] * (dw[l] - disp[l]);
        }
        out[u] = acc;
    }
}

/// `σ Δw`.
fn brownian<'b>(sig: &[f64], dw: &[f64], d: usize, out: &'b mut [f64]) -> &'b [f64] {
    let m = dw.len();
    for u in 0..d {
        out[u] = (0..m).map(|l| sig[u * m + l] * dw[l]).sum();
    }
    out
}

/// `aᵀ A b` for row-major `A`.
fn bilinear(a: &[f64], mat: &[f64], b: &[f64], d: usize) -> f64 {
    let mut s = 0.0;
    for u in 0..d {
        for v in 0..d {
            s += a[u] * mat[u * d + v] * b[v];
        }
    }
    s
}

/// `σ (Δw Δw* − h I) σ*`.
fn centered_square(sig: &[f64], dw: &[f64], h: f64, d: usize, out: &mut [f64]) {
    let m = dw.len();
    for u in 0..d {
        for v in 0..d {
            let mut s = 0.0;
            for l in 0..m {
                for l2 in 0..m {
                    let c = dw[l] * dw[l2] - if l == l2 { h } else { 0.0 };
                    s += sig[u * m + l] * c * sig[v * m + l2];
                }
            }
            out[u * d + v] = s;
        }
    }
}

/// `[direct, formula, direct − formula, residual]` averaged over tagged
/// particles for one run at `n` steps.
fn path_terms<T: Model, F: TestFunction>(
    model: &T,
    f: &F,
    cfg: &RunConfig,
    real: &NoiseRealization,
    n: usize,
    tagged: usize,
) -> Result<[f64; 4]> {
    let traj: Trajectory = simulate(model, cfg, n, real, Record::Path)?;
    if traj.blow_ups() > 0 {
        return Err(Error::Experiment(
            "a path blew up during Itô verification".into(),
        ));
    }
    let view = ResolutionView::new(real, n, 0)?;
    let (d, m) = (model.state_dim(), model.noise_dim());
    let np = cfg.particles;
    let marks = model.marks();
    let nm = marks.len();
    let inv_n = 1.0 / np as f64;

    let mut formula = vec![0.0; tagged];
    let mut cv = vec![0.0; tagged];
    let mut grad = vec![0.0; d];
    let mut mat = vec![0.0; d * d];
    let mut q = vec![0.0; np * d * d];
    let mut dxc = vec![0.0; np * d];
    let mut shift = vec![0.0; d];
    let mut moved = vec![0.0; d];
    let mut bw_i = vec![0.0; d];
    let mut bw_p = vec![0.0; d];
    let mut after = vec![0.0; np * d];
    let mut seq = Vec::new();

    for k in 0..n {
        let step = view.step(k);
        let h = step.h();
        let x = traj.state_at(k).expect("path recorded");
        let x1 = traj.state_at(k + 1).expect("path recorded");
        let mu = EmpiricalMeasure::new_unchecked(x, d);
        let fr = frame(model, x, &mu);

        // Jumps of the step applied in time order, so that repeated jumps of
        // one particle see each other as they do in the scheme.
        after.copy_from_slice(x);
        seq.clear();
        for e in step.jumps() {
            let p = e.particle;
            let now = EmpiricalMeasure::new_unchecked(&after, d);
            model.jump(
                &after[p * d..(p + 1) * d],
                &now,
                marks.atom(e.mark),
                &mut shift,
            );
            for u in 0..d {
                after[p * d + u] += shift[u];
            }
            seq.extend_from_slice(&shift);
        }
        let mu_after = EmpiricalMeasure::new_unchecked(&after, d);

        // Continuous martingale increments of every particle.
        for p in 0..np {
            for u in 0..d {
                dxc[p * d + u] = x1[p * d + u] - after[p * d + u] - fr.drift[p * d + u] * h
                    + fr.comp[p * d + u] * h;
            }
        }
        for p in 0..np {
            centered_square(
                &fr.sigma[p * d * m..(p + 1) * d * m],
                step.dw(p),
                h,
                d,
                &mut q[p * d * d..(p + 1) * d * d],
            );
        }

        for i in 0..tagged {
            let xi = &x[i * d..(i + 1) * d];
            let cov_i = &fr.cov[i * d * d..(i + 1) * d * d];
            let q_i = &q[i * d * d..(i + 1) * d * d];
            let mut gen = 0.0;
            let mut mart = 0.0;

            f.dx(xi, &mu, &mut grad)?;
            for u in 0..d {
                gen += grad[u] * (fr.drift[i * d + u] - fr.comp[i * d + u]);
            }
            mart += dot(&grad, &dxc[i * d..(i + 1) * d]);

            f.dxx(xi, &mu, &mut mat)?;
            gen += 0.5 * dot(&mat, cov_i);
            mart += 0.5 * dot(&mat, q_i);

            f.dx_dmu(xi, &mu, xi, &mut mat)?;
            gen += inv_n * dot(&mat, cov_i);
            mart += inv_n * dot(&mat, q_i);

            for p in 0..np {
                let xp = &x[p * d..(p + 1) * d];
                let cov_p = &fr.cov[p * d * d..(p + 1) * d * d];
                let q_p = &q[p * d * d..(p + 1) * d * d];
                f.dmu(xi, &mu, xp, &mut grad)?;
                for u in 0..d {
                    gen += inv_n * grad[u] * (fr.drift[p * d + u] - fr.comp[p * d + u]);
                }
                mart += inv_n * dot(&grad, &dxc[p * d..(p + 1) * d]);
                f.dy_dmu(xi, &mu, xp, &mut mat)?;
                gen += 0.5 * inv_n * dot(&mat, cov_p);
                mart += 0.5 * inv_n * dot(&mat, q_p);
                f.dmu2(xi, &mu, xp, xp, &mut mat)?;
                gen += 0.5 * inv_n * inv_n * dot(&mat, cov_p);
                mart += 0.5 * inv_n * inv_n * dot(&mat, q_p);
            }

            // Jumps of every particle move the measure, own jumps move x.
            let base = f.value(xi, &mu);
            let mut jump_increment = |p: usize, j: usize| -> Result<f64> {
                let g = &fr.jumps[(p * nm + j) * d..(p * nm + j + 1) * d];
                shift.copy_from_slice(g);
                let shifted = mu.shifted(p, &shift)?;
                moved.copy_from_slice(xi);
                if p == i {
                    for u in 0..d {
                        moved[u] += g[u];
                    }
                }
                Ok(f.value(&moved, &shifted) - base)
            };
            let mut jump_gen = 0.0;
            for p in 0..np {
                for j in 0..nm {
                    jump_gen += marks.weight(j) * jump_increment(p, j)?;
                }
            }
            gen += jump_gen;
            let realized = if step.jumps().is_empty() {
                0.0
            } else {
                f.value(&after[i * d..(i + 1) * d], &mu_after) - base
            };
            mart += realized - h * jump_gen;

            // Brownian increments against the jumps of the same step.
            let bi = brownian(
                &fr.sigma[i * d * m..(i + 1) * d * m],
                step.dw(i),
                d,
                &mut bw_i,
            )
            .to_vec();
            for (local, e) in step.jumps().iter().enumerate() {
                let p = e.particle;
                let g = &seq[local * d..(local + 1) * d];
                let xp = &x[p * d..(p + 1) * d];
                if p == i {
                    own_increment(
                        model,
                        xi,
                        &mu,
                        &fr,
                        i,
                        e.mark,
                        &step,
                        step.first_jump() + local,
                        &mut bw_p,
                    );
                    f.dx_dmu(xi, &mu, xi, &mut mat)?;
                    mart += inv_n * (bilinear(&bw_p, &mat, g, d) + bilinear(g, &mat, &bw_p, d));
                    f.dxx(xi, &mu, &mut mat)?;
                    mart += bilinear(&bw_p, &mat, g, d);
                } else {
                    f.dx_dmu(xi, &mu, xp, &mut mat)?;
                    mart += inv_n * bilinear(&bi, &mat, g, d);
                    brownian(
                        &fr.sigma[p * d * m..(p + 1) * d * m],
                        step.dw(p),
                        d,
                        &mut bw_p,
                    );
                }
                f.dy_dmu(xi, &mu, xp, &mut mat)?;
                mart += inv_n * bilinear(&bw_p, &mat, g, d);
                f.dmu2(xi, &mu, xp, xp, &mut mat)?;
                mart += inv_n * inv_n * bilinear(&bw_p, &mat, g, d);
            }

            formula[i] += h * gen;
            cv[i] += mart;
        }
    }

    let x0 = traj.state_at(0).expect("path recorded");
    let xt = traj.final_state();
    let mu0 = EmpiricalMeasure::new_unchecked(x0, d);
    let mut_ = EmpiricalMeasure::new_unchecked(xt, d);
    let mut out = [0.0; 4];
    for i in 0..tagged {
        let direct =
            f.value(&xt[i * d..(i + 1) * d], &mut_) - f.value(&x0[i * d..(i + 1) * d], &mu0);
        out[0] += direct;
        out[1] += formula[i];
        out[2] += direct - formula[i];
        out[3] += direct - formula[i] - cv[i];
    }
    for v in &mut out {
        *v /= tagged as f64;
    }
    Ok(out)
}
