//! Propagation of chaos: systems of size N against a larger system on
//! shared per-particle noise.

use std::io::Write;

use crate::analysis::map_runs;
use crate::analysis::rate::MAX_EXCLUDED_FRACTION;
use crate::analysis::stats::{linear_fit, LinearFit, MeanEstimate, Z95};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::noise::sample_realization;
use crate::output::csv_writer;
use crate::schemes::{noise_spec_for, simulate, Record};
use crate::seed::SeedSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct PocPoint {
    pub particles: usize,
    pub discrepancy: MeanEstimate,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PocStudy {
    pub config: RunConfig,
    pub reference_particles: usize,
    pub steps: usize,
    pub points: Vec<PocPoint>,
    /// Slope of `log2 discrepancy` against `log2 N`; `None` when some
    /// discrepancy is zero or fewer than two sizes were run.
    pub fit: Option<LinearFit>,
}

impl PocStudy {
    /// Discrepancy strictly decreases along the size list.
    pub fn decreasing(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].discrepancy.mean < w[0].discrepancy.mean)
    }

    /// The 95% intervals of the first and last size do not overlap.
    pub fn endpoints_separated(&self) -> bool {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) if self.points.len() > 1 => {
                b.discrepancy.ci95().1 < a.discrepancy.ci95().0
            }
            _ => false,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w)?;
        out.write_record(["N", "discrepancy", "ci_lo", "ci_hi"])?;
        for p in &self.points {
            let (lo, hi) = p.discrepancy.ci95();
            out.write_record([
                p.particles.to_string(),
                p.discrepancy.mean.to_string(),
                lo.to_string(),
                hi.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "propagation of chaos: scheme {}, N_ref = {}, n = {}, R = {}, seed {}\n",
            self.config.scheme.name(),
            self.reference_particles,
            self.steps,
            self.config.runs,
            self.config.seed
        );
        for p in &self.points {
            s.push_str(&format!(
                "  N = {:>6}  discrepancy = {:.6e} ± {:.2e}\n",
                p.particles,
                p.discrepancy.mean,
                Z95 * p.discrepancy.se
            ));
        }
        s.push_str(&format!(
            "strictly decreasing: {}, endpoints separated: {}\n",
            self.decreasing(),
            self.endpoints_separated()
        ));
        match &self.fit {
            Some(f) => s.push_str(&format!(
                "fitted N-slope {:.3} ± {:.3} (informational; the limiting constant is not reproducible at this scale)\n",
                f.slope,
                Z95 * f.slope_se
            )),
            None => s.push_str("fitted N-slope unavailable\n"),
        }
        s
    }
}

/// Runs systems of each size in `sizes` and one of `reference_particles`,
/// all at resolution `n`, and compares the first particles of each.
/// `cfg.particles` is ignored.
pub fn poc_experiment<T: Model>(
    model: &T,
    cfg: &RunConfig,
    sizes: &[usize],
    reference_particles: usize,
    n: usize,
) -> Result<PocStudy> {
    if sizes.is_empty() {
        return Err(Error::config("no system sizes requested"));
    }
    if let Some(bad) = sizes.iter().find(|s| **s == 0 || **s > reference_particles) {
        return Err(Error::config(format!(
            "system size {bad} must be between 1 and N_ref = {reference_particles}"
        )));
    }
    let seeds = SeedSequence::new(cfg.seed);
    let d = model.state_dim();
    let sized = |particles: usize| RunConfig {
        particles,
        ..cfg.clone()
    };
    let ref_cfg = sized(reference_particles);
    ref_cfg.validate()?;
    let per_run = map_runs(cfg.threads, cfg.runs, |run| {
        let spec = noise_spec_for(model, &ref_cfg, n);
        let real = sample_realization(&spec, model.marks(), &seeds, run)?;
        let reference = simulate(model, &ref_cfg, n, &real, Record::FinalOnly)?;
        drop(real);
        let mut row = Vec::with_capacity(sizes.len());
        for &size in sizes {
            let small_cfg = sized(size);
            let spec = noise_spec_for(model, &small_cfg, n);
            let real = sample_realization(&spec, model.marks(), &seeds, run)?;
            let small = simulate(model, &small_cfg, n, &real, Record::FinalOnly)?;
            let mut sum = 0.0;
            let mut kept = 0usize;
            for i in 0..size {
                if reference.blown[i] || small.blown[i] {
                    continue;
                }
                let a = &reference.final_state()[i * d..(i + 1) * d];
                let b = &small.final_state()[i * d..(i + 1) * d];
                sum += a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
                kept += 1;
            }
            let value = if kept > 0 {
                sum / kept as f64
            } else {
                f64::NAN
            };
            row.push((value, size - kept));
        }
        Ok(row)
    })?;

    let mut points = Vec::with_capacity(sizes.len());
    for (j, &size) in sizes.iter().enumerate() {
        let excluded: usize = per_run.iter().map(|r| r[j].1).sum();
        let paths = size * cfg.runs;
        if excluded as f64 > MAX_EXCLUDED_FRACTION * paths as f64 {
            return Err(Error::Experiment(format!(
                "{excluded} of {paths} paths blew up at N = {size}"
            )));
        }
        let values: Vec<f64> = per_run
            .iter()
            .map(|r| r[j].0)
            .filter(|v| v.is_finite())
            .collect();
        points.push(PocPoint {
            particles: size,
            discrepancy: MeanEstimate::from_samples(&values),
            excluded,
        });
    }
    let fit = if points.len() >= 2 && points.iter().all(|p| p.discrepancy.mean > 0.0) {
        let x: Vec<f64> = points.iter().map(|p| (p.particles as f64).log2()).collect();
        let y: Vec<f64> = points.iter().map(|p| p.discrepancy.mean.log2()).collect();
        linear_fit(&x, &y).ok()
    } else {
        None
    };
    Ok(PocStudy {
        config: cfg.clone(),
        reference_particles,
        steps: n,
        points,
        fit,
    })
}
