//! Strong errors against a fine same-scheme reference and rate fits.

use std::io::Write;

use crate::analysis::map_runs;
use crate::analysis::stats::{linear_fit, MeanEstimate, Z95};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::noise::sample_realization;
use crate::output::csv_writer;
use crate::schemes::{noise_spec_for, simulate, Record};
use crate::seed::SeedSequence;

/// Largest tolerated share of excluded particle paths.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;

/// Strong error at one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorPoint {
    pub n: usize,
    /// Run-level estimate of the particle-averaged squared error.
    pub mse: MeanEstimate,
    pub excluded: usize,
    pub paths: usize,
}

/// Log-log fit of MSE against n.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub slope_se: f64,
    /// `−slope / 2`.
    pub rms_rate: f64,
    pub rms_rate_se: f64,
}

/// Least-squares slope of `log MSE` against `log n`.
pub fn fit_rate(resolutions: &[usize], mses: &[f64]) -> Result<RateFit> {
    if resolutions.len() != mses.len() {
        return Err(Error::domain("one MSE per resolution is required"));
    }
    if resolutions.len() < 4 {
        return Err(Error::domain(
            "rate regression needs at least 4 resolutions",
        ));
    }
    if let Some(bad) = mses.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::domain(format!(
            "MSE must be positive and finite, got {bad}"
        )));
    }
    if resolutions.contains(&0) {
        return Err(Error::domain("resolutions must be positive"));
    }
    let x: Vec<f64> = resolutions.iter().map(|n| (*n as f64).log2()).collect();
    let y: Vec<f64> = mses.iter().map(|v| v.log2()).collect();
    let fit = linear_fit(&x, &y)?;
    Ok(RateFit {
        slope: fit.slope,
        slope_se: fit.slope_se,
        rms_rate: -fit.slope / 2.0,
        rms_rate_se: fit.slope_se / 2.0,
    })
}

/// Outcome of a rate study for one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct RateStudy {
    pub config: RunConfig,
    pub n_ref: usize,
    pub points: Vec<ErrorPoint>,
    pub fit: RateFit,
}

impl RateStudy {
    /// Writes `n, mse, mse_ci_lo, mse_ci_hi, rms_rate_running`; the running
    /// rate is the fit over the first k points, empty when fewer than 4.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w)?;
        out.write_record(["n", "mse", "mse_ci_lo", "mse_ci_hi", "rms_rate_running"])?;
        let ns: Vec<usize> = self.points.iter().map(|p| p.n).collect();
        let ms: Vec<f64> = self.points.iter().map(|p| p.mse.mean).collect();
        for (k, p) in self.points.iter().enumerate() {
            let running = if k + 1 >= 4 {
                fit_rate(&ns[..=k], &ms[..=k])
                    .map(|f| f.rms_rate.to_string())
                    .unwrap_or_default()
            } else {
                String::new()
            };
            let (lo, hi) = p.mse.ci95();
            out.write_record([
                p.n.to_string(),
                p.mse.mean.to_string(),
                lo.to_string(),
                hi.to_string(),
                running,
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "rate study: scheme {}, N = {}, R = {}, n_ref = {}, seed {}\n",
            self.config.scheme.name(),
            self.config.particles,
            self.config.runs,
            self.n_ref,
            self.config.seed
        );
        s.push_str("reference: same scheme at n_ref on the same noise\n");
        for p in &self.points {
            s.push_str(&format!(
                "  n = {:>6}  mse = {:.6e} ± {:.2e}  excluded {}/{}\n",
                p.n,
                p.mse.mean,
                Z95 * p.mse.se,
                p.excluded,
                p.paths
            ));
        }
        s.push_str(&format!(
            "fitted rms rate = {:.4} (stderr {:.4}), log-log slope {:.4}\n",
            self.fit.rms_rate, self.fit.rms_rate_se, self.fit.slope
        ));
        s
    }
}

fn check_resolutions(resolutions: &[usize], n_ref: usize) -> Result<()> {
    if resolutions.is_empty() {
        return Err(Error::config("no resolutions requested"));
    }
    for &n in resolutions {
        if n == 0 || n > n_ref || !n_ref.is_multiple_of(n) || !(n_ref / n).is_power_of_two() {
            return Err(Error::config(format!(
                "resolution {n} must divide n_ref = {n_ref} by a power of two"
            )));
        }
    }
    Ok(())
}

/// Per-run squared errors (particle-averaged) and exclusion counts.
fn run_errors<T: Model>(
    model: &T,
    cfg: &RunConfig,
    resolutions: &[usize],
    n_ref: usize,
) -> Result<Vec<Vec<(f64, usize)>>> {
    let spec = noise_spec_for(model, cfg, n_ref);
    let seeds = SeedSequence::new(cfg.seed);
    let d = model.state_dim();
    map_runs(cfg.threads, cfg.runs, |run| {
        let real = sample_realization(&spec, model.marks(), &seeds, run)?;
        let reference = simulate(model, cfg, n_ref, &real, Record::FinalOnly)?;
        let mut row = Vec::with_capacity(resolutions.len());
        for &n in resolutions {
            let coarse = simulate(model, cfg, n, &real, Record::FinalOnly)?;
            let mut sum = 0.0;
            let mut kept = 0usize;
            for i in 0..cfg.particles {
                if reference.blown[i] || coarse.blown[i] {
                    continue;
                }
                let a = &reference.final_state()[i * d..(i + 1) * d];
                let b = &coarse.final_state()[i * d..(i + 1) * d];
                sum += a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
                kept += 1;
            }
            let mse = if kept > 0 {
                sum / kept as f64
            } else {
                f64::NAN
            };
            row.push((mse, cfg.particles - kept));
        }
        Ok(row)
    })
}

fn aggregate(
    cfg: &RunConfig,
    resolutions: &[usize],
    per_run: &[Vec<(f64, usize)>],
) -> Result<Vec<ErrorPoint>> {
    let paths = cfg.runs * cfg.particles;
    let mut points = Vec::with_capacity(resolutions.len());
    for (j, &n) in resolutions.iter().enumerate() {
        let excluded: usize = per_run.iter().map(|r| r[j].1).sum();
        if excluded as f64 > MAX_EXCLUDED_FRACTION * paths as f64 {
            return Err(Error::Experiment(format!(
                "{excluded} of {paths} paths blew up at n = {n}"
            )));
        }
        let values: Vec<f64> = per_run
            .iter()
            .map(|r| r[j].0)
            .filter(|v| v.is_finite())
            .collect();
        points.push(ErrorPoint {
            n,
            mse: MeanEstimate::from_samples(&values),
            excluded,
            paths,
        });
    }
    Ok(points)
}

/// Strong error of `cfg.scheme` at `n` against the same scheme at `n_ref`.
pub fn strong_error<T: Model>(
    model: &T,
    cfg: &RunConfig,
    n: usize,
    n_ref: usize,
) -> Result<ErrorPoint> {
    cfg.validate()?;
    check_resolutions(&[n], n_ref)?;
    let per_run = run_errors(model, cfg, &[n], n_ref)?;
    Ok(aggregate(cfg, &[n], &per_run)?.remove(0))
}

/// Strong errors at every resolution plus the fitted rate.
pub fn rate_study<T: Model>(
    model: &T,
    cfg: &RunConfig,
    resolutions: &[usize],
    n_ref: usize,
) -> Result<RateStudy> {
    cfg.validate()?;
    check_resolutions(resolutions, n_ref)?;
    if resolutions.len() < 4 {
        return Err(Error::config("a rate study needs at least 4 resolutions"));
    }
    let per_run = run_errors(model, cfg, resolutions, n_ref)?;
    let points = aggregate(cfg, resolutions, &per_run)?;
    let mses: Vec<f64> = points.iter().map(|p| p.mse.mean).collect();
    let fit = fit_rate(resolutions, &mses)?;
    Ok(RateStudy {
        config: cfg.clone(),
        n_ref,
        points,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let ns = [8, 16, 32, 64];
        let m2: Vec<f64> = ns.iter().map(|n| 3.0 / (*n as f64).powi(2)).collect();
        assert!((fit_rate(&ns, &m2).unwrap().rms_rate - 1.0).abs() < 1e-12);
        let m1: Vec<f64> = ns.iter().map(|n| 3.0 / *n as f64).collect();
        assert!((fit_rate(&ns, &m1).unwrap().rms_rate - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_rate(&[1, 2, 4], &[1.0, 0.5, 0.25]).is_err());
        assert!(fit_rate(&[1, 2, 4, 8], &[1.0, 0.0, 0.25, 0.1]).is_err());
        assert!(check_resolutions(&[3], 16).is_err());
        assert!(check_resolutions(&[4, 16], 16).is_ok());
    }
}
