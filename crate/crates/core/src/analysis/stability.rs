//! Blow-up counts and moment monitors across resolutions.

use crate::analysis::map_runs;
use crate::analysis::stats::{linear_fit, MeanEstimate, Z95_ONE_SIDED};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::noise::sample_realization;
use crate::schemes::{noise_spec_for, simulate, Record};
use crate::seed::SeedSequence;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowUpStudy {
    pub steps: usize,
    pub paths: usize,
    pub blown: usize,
}

impl BlowUpStudy {
    pub fn fraction(&self) -> f64 {
        self.blown as f64 / self.paths as f64
    }
}

/// Counts particle paths that blow up at resolution `n`.
pub fn blow_up_study<T: Model>(model: &T, cfg: &RunConfig, n: usize) -> Result<BlowUpStudy> {
    cfg.validate()?;
    let spec = noise_spec_for(model, cfg, n);
    let seeds = SeedSequence::new(cfg.seed);
    let counts = map_runs(cfg.threads, cfg.runs, |run| {
        let real = sample_realization(&spec, model.marks(), &seeds, run)?;
        Ok(simulate(model, cfg, n, &real, Record::FinalOnly)?.blow_ups())
    })?;
    Ok(BlowUpStudy {
        steps: n,
        paths: cfg.runs * cfg.particles,
        blown: counts.iter().sum(),
    })
}

/// Empirical `E|x_T|^p` per resolution and the run-level trend in `log2 n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrend {
    pub order: f64,
    pub resolutions: Vec<usize>,
    pub moments: Vec<MeanEstimate>,
    /// Per-run regression slopes of the moment against `log2 n`.
    pub slope: MeanEstimate,
    pub blown: usize,
}

impl MomentTrend {
    /// The slope is positive at one-sided 95% confidence.
    pub fn increasing(&self) -> bool {
        self.slope.mean - Z95_ONE_SIDED * self.slope.se > 0.0
    }
}

pub fn moment_trend<T: Model>(
    model: &T,
    cfg: &RunConfig,
    resolutions: &[usize],
    order: f64,
) -> Result<MomentTrend> {
    cfg.validate()?;
    if resolutions.len() < 2 {
        return Err(Error::config(
            "a moment trend needs at least two resolutions",
        ));
    }
    let n_max = *resolutions.iter().max().unwrap_or(&1);
    if resolutions
        .iter()
        .any(|n| *n == 0 || !n_max.is_multiple_of(*n) || !(n_max / n).is_power_of_two())
    {
        return Err(Error::config(
            "resolutions must be dyadic divisors of the largest one",
        ));
    }
    let spec = noise_spec_for(model, cfg, n_max);
    let seeds = SeedSequence::new(cfg.seed);
    let d = model.state_dim();
    let logs: Vec<f64> = resolutions.iter().map(|n| (*n as f64).log2()).collect();
    let per_run = map_runs(cfg.threads, cfg.runs, |run| {
        let real = sample_realization(&spec, model.marks(), &seeds, run)?;
        let mut row = Vec::with_capacity(resolutions.len());
        let mut blown = 0;
        for &n in resolutions {
            let traj = simulate(model, cfg, n, &real, Record::FinalOnly)?;
            blown += traj.blow_ups();
            let mut sum = 0.0;
            let mut kept = 0usize;
            for (i, x) in traj.final_state().chunks_exact(d).enumerate() {
                if traj.blown[i] {
                    continue;
                }
                sum += x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(order);
                kept += 1;
            }
            row.push(if kept > 0 {
                sum / kept as f64
            } else {
                f64::NAN
            });
        }
        Ok((row, blown))
    })?;
    let moments = (0..resolutions.len())
        .map(|j| {
            let v: Vec<f64> = per_run
                .iter()
                .map(|r| r.0[j])
                .filter(|v| v.is_finite())
                .collect();
            MeanEstimate::from_samples(&v)
        })
        .collect();
    let mut slopes = Vec::with_capacity(per_run.len());
    for (row, _) in &per_run {
        if row.iter().all(|v| v.is_finite()) {
            slopes.push(linear_fit(&logs, row)?.slope);
        }
    }
    Ok(MomentTrend {
        order,
        resolutions: resolutions.to_vec(),
        moments,
        slope: MeanEstimate::from_samples(&slopes),
        blown: per_run.iter().map(|r| r.1).sum(),
    })
}
