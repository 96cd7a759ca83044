//! Consistency checks of the coupled noise across resolutions.

use crate::analysis::stats::MeanEstimate;
use crate::config::InitialLaw;
use crate::error::Result;
use crate::model::MarkMeasure;
use crate::noise::{sample_realization, NoiseSpec, ResolutionView};
use crate::seed::SeedSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingReport {
    /// Coarse increments and time integrals that differ in any bit from
    /// the combination of the two finer cells below them.
    pub sum_mismatches: usize,
    /// Diagonal iterated integrals that differ in any bit from
    /// `((Δw)² − h) / 2`.
    pub iterated_mismatches: usize,
    pub step: f64,
    /// Estimates of `E[Δw²]`, `E[Δw J]`, `E[J²]`.
    pub moments: [MeanEstimate; 3],
    /// `h`, `h²/2`, `h³/3`.
    pub targets: [f64; 3],
}

impl CouplingReport {
    /// Every moment lies within `k` standard errors of its target.
    pub fn moments_agree(&self, k: f64) -> bool {
        self.moments
            .iter()
            .zip(&self.targets)
            .all(|(e, t)| (e.mean - t).abs() < k * e.se)
    }

    pub fn exact(&self) -> bool {
        self.sum_mismatches == 0 && self.iterated_mismatches == 0
    }
}

const PARTICLES: usize = 500;
const N_MAX: usize = 64;
const COARSE: usize = 4;
const NOISE_DIM: usize = 2;

/// Samples realizations with jumps at `N_MAX` fine cells until `samples`
/// coarse `(Δw, J)` pairs are collected at `COARSE` steps on `[0, 1]`.
pub fn noise_coupling_check(samples: usize, seed: u64) -> Result<CouplingReport> {
    let spec = NoiseSpec {
        particles: PARTICLES,
        state_dim: 1,
        noise_dim: NOISE_DIM,
        horizon: 1.0,
        n_max: N_MAX,
        split_all: false,
        initial: InitialLaw::point(0.0),
    };
    let marks = MarkMeasure::symmetric_unit(2.0)?;
    let seeds = SeedSequence::new(seed);
    let h = 1.0 / COARSE as f64;
    let per_run = PARTICLES * COARSE * NOISE_DIM;
    let runs = samples.div_ceil(per_run).max(1);
    let (mut sums, mut iters) = (0usize, 0usize);
    let mut values: [Vec<f64>; 3] = Default::default();
    let mut out = vec![0.0; NOISE_DIM * NOISE_DIM];
    for run in 0..runs {
        let real = sample_realization(&spec, &marks, &seeds, run)?;
        let mut views: Vec<ResolutionView> = Vec::new();
        let mut n = N_MAX;
        while n >= 1 {
            views.push(ResolutionView::new(&real, n, 2)?);
            n /= 2;
        }
        for i in 0..PARTICLES {
            for k in 0..N_MAX {
                let (fine, top) = (real.fine_dw(i, k), views[0].step(k));
                if fine
                    .iter()
                    .zip(top.dw(i))
                    .any(|(a, b)| a.to_bits() != b.to_bits())
                {
                    sums += 1;
                }
            }
            for pair in views.windows(2) {
                let (fine, coarse) = (&pair[0], &pair[1]);
                let len_r = fine.grid().step_size();
                for k in 0..coarse.steps() {
                    let (a, b, s) = (fine.step(2 * k), fine.step(2 * k + 1), coarse.step(k));
                    for c in 0..NOISE_DIM {
                        let dw = a.dw(i)[c] + b.dw(i)[c];
                        let jj = a.time_integral(i)[c] + b.time_integral(i)[c] + a.dw(i)[c] * len_r;
                        if s.dw(i)[c].to_bits() != dw.to_bits()
                            || s.time_integral(i)[c].to_bits() != jj.to_bits()
                        {
                            sums += 1;
                        }
                    }
                }
            }
            let view = views
                .iter()
                .find(|v| v.steps() == COARSE)
                .expect("coarse level present");
            for k in 0..COARSE {
                let step = view.step(k);
                for c in 0..NOISE_DIM {
                    let dw = step.dw(i)[c];
                    let jj = step.time_integral(i)[c];
                    values[0].push(dw * dw);
                    values[1].push(dw * jj);
                    values[2].push(jj * jj);
                }
            }
            for v in &views {
                for k in 0..v.steps() {
                    let step = v.step(k);
                    step.iterated(i, &mut out);
                    for c in 0..NOISE_DIM {
                        let dw = step.dw(i)[c];
                        let expect = 0.5 * (dw * dw - step.h());
                        if out[c * NOISE_DIM + c].to_bits() != expect.to_bits() {
                            iters += 1;
                        }
                    }
                }
            }
        }
    }
    for v in values.iter_mut() {
        v.truncate(samples.max(2));
    }
    Ok(CouplingReport {
        sum_mismatches: sums,
        iterated_mismatches: iters,
        step: h,
        moments: [
            MeanEstimate::from_samples(&values[0]),
            MeanEstimate::from_samples(&values[1]),
            MeanEstimate::from_samples(&values[2]),
        ],
        targets: [h, h * h / 2.0, h * h * h / 3.0],
    })
}
