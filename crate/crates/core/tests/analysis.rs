use std::collections::BTreeMap;

use mkv_milstein::analysis::*;
use mkv_milstein::config::{InitialLaw, RunConfig, SchemeKind, TamingMode};
use mkv_milstein::measure::{measure_taylor_check, MeasureView};
use mkv_milstein::models::{LinearParams, MeanFieldOUJump};
use mkv_milstein::noise::sample_realization;
use mkv_milstein::schemes::{noise_spec_for, simulate, Record};
use mkv_milstein::seed::SeedSequence;
use mkv_milstein::{Error, Grid, Model, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn drift_only(c: f64) -> MeanFieldOUJump {
    MeanFieldOUJump::new(LinearParams {
        c,
        s0: 0.0,
        s1: 0.0,
        g0: 0.0,
        g1: 0.0,
        lambda: 0.0,
        ..LinearParams::default()
    })
    .unwrap()
}

fn untamed(particles: usize, runs: usize, steps: usize) -> RunConfig {
    let mut cfg = RunConfig::new(particles, runs, 5, Grid::new(1.0, steps).unwrap());
    cfg.taming = TamingMode::Off;
    cfg
}

struct Constant;
impl TestFunction for Constant {
    fn value<M: MeasureView>(&self, _: &[f64], _: &M) -> f64 {
        3.5
    }
    fn dx<M: MeasureView>(&self, _: &[f64], _: &M, out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
    fn dxx<M: MeasureView>(&self, _: &[f64], _: &M, out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
    fn dmu<M: MeasureView>(&self, _: &[f64], _: &M, _: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
    fn dx_dmu<M: MeasureView>(&self, _: &[f64], _: &M, _: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
    fn dy_dmu<M: MeasureView>(&self, _: &[f64], _: &M, _: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
    fn dmu2<M: MeasureView>(
        &self,
        _: &[f64],
        _: &M,
        _: &[f64],
        _: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
}

/// `F(x, μ) = |x|²`.
struct Square;
impl TestFunction for Square {
    fn value<M: MeasureView>(&self, x: &[f64], _: &M) -> f64 {
        x.iter().map(|v| v * v).sum()
    }
    fn dx<M: MeasureView>(&self, x: &[f64], _: &M, out: &mut [f64]) -> Result<()> {
        for (o, v) in out.iter_mut().zip(x) {
            *o = 2.0 * v;
        }
        Ok(())
    }
    fn dxx<M: MeasureView>(&self, x: &[f64], _: &M, out: &mut [f64]) -> Result<()> {
        let d = x.len();
        out.fill(0.0);
        for u in 0..d {
            out[u * d + u] = 2.0;
        }
        Ok(())
    }
    fn dmu<M: MeasureView>(&self, _: &[f64], _: &M, _: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
    fn dx_dmu<M: MeasureView>(&self, _: &[f64], _: &M, _: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
    fn dy_dmu<M: MeasureView>(&self, _: &[f64], _: &M, _: &[f64], out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
    fn dmu2<M: MeasureView>(
        &self,
        _: &[f64],
        _: &M,
        _: &[f64],
        _: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
}

/// Only the value and the state derivatives.
struct NoLions;
impl TestFunction for NoLions {
    fn value<M: MeasureView>(&self, x: &[f64], _: &M) -> f64 {
        x[0]
    }
    fn dx<M: MeasureView>(&self, _: &[f64], _: &M, out: &mut [f64]) -> Result<()> {
        out.fill(1.0);
        Ok(())
    }
    fn dxx<M: MeasureView>(&self, _: &[f64], _: &M, out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
}

#[test]
fn ito_constant_function_gives_zero() {
    let model = MeanFieldOUJump::new(LinearParams::default()).unwrap();
    let r = ito_verify(
        &model,
        &Constant,
        &untamed(20, 5, 32),
        ItoSpec {
            tagged: 3,
            steps: 32,
        },
    )
    .unwrap();
    for e in [&r.direct, &r.formula, &r.difference, &r.residual] {
        assert_eq!(e.mean, 0.0);
    }
}

#[test]
fn ito_drift_only_square_is_the_chain_rule() {
    // F(x_{k+1}) − F(x_k) − 2 x_k b_k h = (h b_k)² = (x_{k+1} − x_k)² along the Euler polygon
    let model = drift_only(0.5);
    let mut cfg = untamed(10, 4, 64);
    cfg.initial = InitialLaw { mean: 1.0, sd: 0.7 };
    let tagged = 3;
    let r = ito_verify(&model, &Square, &cfg, ItoSpec { tagged, steps: 64 }).unwrap();

    let spec = noise_spec_for(&model, &cfg, 64);
    let seeds = SeedSequence::new(cfg.seed);
    let mut expect = 0.0;
    for run in 0..cfg.runs {
        let real = sample_realization(&spec, model.marks(), &seeds, run).unwrap();
        let tr = simulate(&model, &cfg, 64, &real, Record::Path).unwrap();
        let mut s = 0.0;
        for k in 0..64 {
            let (a, b) = (tr.state_at(k).unwrap(), tr.state_at(k + 1).unwrap());
            s += (0..tagged).map(|i| (b[i] - a[i]).powi(2)).sum::<f64>();
        }
        expect += s / tagged as f64;
    }
    expect /= cfg.runs as f64;
    assert!(
        (r.difference.mean - expect).abs() < 1e-12 * expect.max(1.0),
        "{} vs {expect}",
        r.difference.mean
    );
    // the quadrature error is O(h) of the integral
    assert!(r.difference.mean.abs() < 0.05 * r.direct.mean.abs().max(1.0));
}

#[test]
fn ito_pure_jump_residual_vanishes_with_two_jumps_in_a_step() {
    // symmetric marks, no drift, no diffusion: the compensator is zero and a
    // step with at most two own jumps is exactly those jumps applied in time
    // order, so the residual is rounding only
    let model = MeanFieldOUJump::new(LinearParams {
        a: 0.0,
        c: 0.0,
        s0: 0.0,
        s1: 0.0,
        lambda: 20.0,
        ..LinearParams::default()
    })
    .unwrap();
    let (steps, tagged) = (1024, 3);
    let mut cfg = untamed(10, 4, steps);
    cfg.seed = 11;
    let r = ito_verify(&model, &Square, &cfg, ItoSpec { tagged, steps }).unwrap();

    let spec = noise_spec_for(&model, &cfg, steps);
    let seeds = SeedSequence::new(cfg.seed);
    let mut most = Vec::new();
    for run in 0..cfg.runs {
        let real = sample_realization(&spec, model.marks(), &seeds, run).unwrap();
        let mut counts = BTreeMap::new();
        for e in real.jumps().iter().filter(|e| e.particle < tagged) {
            *counts
                .entry((e.particle, (e.time * steps as f64) as usize))
                .or_insert(0) += 1;
        }
        most.push(counts.values().copied().max().unwrap_or(0));
    }
    assert!(
        most.contains(&2) && most.iter().all(|&c| c <= 2),
        "{most:?}"
    );
    assert!(r.residual.mean.abs() < 1e-10, "{}", r.summary());
    assert!(r.residual.se < 1e-10, "{}", r.summary());
    assert!(r.difference.mean.abs() > 1e-3);
}

#[test]
fn ito_missing_derivative_is_a_config_error() {
    let model = MeanFieldOUJump::new(LinearParams::default()).unwrap();
    let err = ito_verify(
        &model,
        &NoLions,
        &untamed(5, 2, 8),
        ItoSpec {
            tagged: 1,
            steps: 8,
        },
    )
    .unwrap_err();
    match err {
        Error::Config(msg) => assert!(msg.contains("dmu"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn ito_rejects_taming() {
    let model = MeanFieldOUJump::new(LinearParams::default()).unwrap();
    let mut cfg = untamed(5, 2, 8);
    cfg.taming = TamingMode::On;
    assert!(matches!(
        ito_verify(
            &model,
            &QuadraticMean,
            &cfg,
            ItoSpec {
                tagged: 1,
                steps: 8
            }
        ),
        Err(Error::Config(_))
    ));
}

#[test]
fn strong_error_at_the_reference_is_zero() {
    let model = MeanFieldOUJump::new(LinearParams::default()).unwrap();
    let cfg = RunConfig::new(30, 3, 2, Grid::new(1.0, 64).unwrap());
    let p = strong_error(&model, &cfg, 64, 64).unwrap();
    assert_eq!(p.mse.mean, 0.0);
}

#[test]
fn strong_error_rejects_non_dyadic_resolutions() {
    let model = MeanFieldOUJump::new(LinearParams::default()).unwrap();
    let cfg = RunConfig::new(5, 1, 2, Grid::new(1.0, 64).unwrap());
    assert!(strong_error(&model, &cfg, 24, 64).is_err());
}

#[test]
fn drift_only_error_has_rate_one_against_the_exact_flow() {
    // x' = a x + c m with m' = (a + c) m gives x_T = e^{aT} (x0 + m0 (e^{cT} − 1))
    let (a, c): (f64, f64) = (-0.5, 0.5);
    let model = drift_only(c);
    let ns = [8usize, 16, 32, 64, 128, 256];
    let mut mses = Vec::new();
    for &n in &ns {
        let mut cfg = untamed(40, 1, n);
        cfg.scheme = SchemeKind::Milstein;
        let real = sample_realization(
            &noise_spec_for(&model, &cfg, n),
            model.marks(),
            &SeedSequence::new(9),
            0,
        )
        .unwrap();
        let x0 = real.initial().to_vec();
        let m0 = x0.iter().sum::<f64>() / x0.len() as f64;
        let tr = simulate(&model, &cfg, n, &real, Record::FinalOnly).unwrap();
        let mse = tr
            .final_state()
            .iter()
            .zip(&x0)
            .map(|(x, x0)| (x - a.exp() * (x0 + m0 * (c.exp() - 1.0))).powi(2))
            .sum::<f64>()
            / x0.len() as f64;
        mses.push(mse);
    }
    let fit = fit_rate(&ns, &mses).unwrap();
    assert!((fit.rms_rate - 1.0).abs() < 0.03, "{fit:?}");
}

#[test]
fn fit_rate_is_scale_invariant() {
    let ns = [8usize, 16, 32, 64, 128];
    let mses: Vec<f64> = ns
        .iter()
        .map(|&n| 0.3 * (n as f64).powf(-1.7) * (1.0 + 0.1 * (n as f64).sin()))
        .collect();
    let a = fit_rate(&ns, &mses).unwrap();
    let scaled: Vec<f64> = mses.iter().map(|m| 1e6 * m).collect();
    let b = fit_rate(&ns, &scaled).unwrap();
    assert!((a.slope - b.slope).abs() < 1e-12);
    assert!((a.slope_se - b.slope_se).abs() < 1e-12);
}

#[test]
fn jittered_power_law_is_recovered_within_stderr() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ns: Vec<usize> = (3..11).map(|k| 1usize << k).collect();
    let mut hits = 0;
    let trials = 4000;
    for _ in 0..trials {
        let mses: Vec<f64> = ns
            .iter()
            .map(|&n| 2.0 * (n as f64).powi(-2) * (rng.random_range(-0.2..0.2f64)).exp())
            .collect();
        let fit = fit_rate(&ns, &mses).unwrap();
        // two-sided 95% t quantile with 6 degrees of freedom
        if (fit.rms_rate - 1.0).abs() < 2.447 * fit.rms_rate_se {
            hits += 1;
        }
    }
    assert!(hits as f64 > 0.9 * trials as f64, "{hits}/{trials}");
}

#[test]
fn fit_rate_rejects_nonpositive_errors() {
    assert!(matches!(
        fit_rate(&[1, 2, 4, 8], &[1.0, 0.5, 0.0, 0.1]),
        Err(Error::Domain(_))
    ));
    assert!(fit_rate(&[1, 2, 4], &[1.0, 0.5, 0.2]).is_err());
}

#[test]
fn decoupled_systems_show_no_chaos_discrepancy() {
    let model = MeanFieldOUJump::new(LinearParams {
        c: 0.0,
        ..LinearParams::default()
    })
    .unwrap();
    // the taming scale sees W₂ of the system, so compare untamed
    let mut cfg = RunConfig::new(40, 3, 6, Grid::new(1.0, 16).unwrap());
    cfg.taming = TamingMode::Off;
    let study = poc_experiment(&model, &cfg, &[5, 10, 20], 40, 16).unwrap();
    for p in &study.points {
        assert_eq!(p.discrepancy.mean, 0.0, "N = {}", p.particles);
    }
}

#[test]
fn chaos_discrepancy_vanishes_at_the_reference_size() {
    let model = MeanFieldOUJump::new(LinearParams::default()).unwrap();
    let cfg = RunConfig::new(30, 3, 6, Grid::new(1.0, 16).unwrap());
    let study = poc_experiment(&model, &cfg, &[10, 30], 30, 16).unwrap();
    assert!(study.points[0].discrepancy.mean > 0.0);
    assert_eq!(study.points[1].discrepancy.mean, 0.0);
}

#[test]
fn rate_csv_has_the_documented_columns() {
    let model = MeanFieldOUJump::new(LinearParams::default()).unwrap();
    let cfg = RunConfig::new(20, 3, 1, Grid::new(1.0, 64).unwrap());
    let study = rate_study(&model, &cfg, &[4, 8, 16, 32], 256).unwrap();
    let mut buf = Vec::new();
    study.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# mkv-milstein schema v1"));
    assert_eq!(
        lines.next(),
        Some("n,mse,mse_ci_lo,mse_ci_hi,rms_rate_running")
    );
    assert_eq!(lines.count(), 4);
    assert!(study.summary().contains("fitted rms rate"));
}

#[test]
fn milstein_is_not_worse_than_euler_on_the_linear_model() {
    let model = MeanFieldOUJump::new(LinearParams::default()).unwrap();
    let mut cfg = RunConfig::new(50, 10, 3, Grid::new(1.0, 64).unwrap());
    let mil = strong_error(&model, &cfg, 32, 512).unwrap();
    cfg.scheme = SchemeKind::Euler;
    let eul = strong_error(&model, &cfg, 32, 512).unwrap();
    assert!(mil.mse.mean < eul.mse.mean, "{:?} {:?}", mil.mse, eul.mse);
}

#[test]
fn pth_power_fuzz_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let samples: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..2000)
        .map(|_| {
            let d = rng.random_range(1..=3);
            let x = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            (x, y, rng.random_range(4.001..12.0))
        })
        .collect();
    let r = pth_power_inequality_check(&samples).unwrap();
    assert_eq!(r.violations, 0);
    assert!(pth_power_inequality_check(&[(vec![1.0], vec![0.0], 4.0)]).is_err());
}

#[test]
fn quadratic_mean_satisfies_the_measure_taylor_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [2usize, 5, 50] {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let c = measure_taylor_check(&QuadraticMean, &[0.3], &x, &y, 1, 4).unwrap();
        assert!(c.residual < 1e-10, "{c:?}");
    }
}

#[test]
fn noise_coupling_is_exact_and_moments_match() {
    let r = noise_coupling_check(20_000, 3).unwrap();
    assert!(r.exact(), "{r:?}");
    assert!(r.moments_agree(4.0), "{r:?}");
    assert_eq!(r.targets, [0.25, 0.03125, 0.25f64.powi(3) / 3.0]);
}

#[test]
fn blow_up_and_moment_trend_report_consistent_counts() {
    use mkv_milstein::models::{CubicMeanField, CubicParams};
    let model = CubicMeanField::new(CubicParams::default()).unwrap();
    let mut cfg = RunConfig::new(20, 5, 1, Grid::new(1.0, 4).unwrap());
    cfg.initial = InitialLaw { mean: 0.0, sd: 2.0 };
    let tamed = blow_up_study(&model, &cfg, 4).unwrap();
    assert_eq!(tamed.blown, 0);
    assert_eq!(tamed.paths, 100);
    let trend = moment_trend(&model, &cfg, &[4, 8, 16, 32], 6.0).unwrap();
    assert_eq!(trend.moments.len(), 4);
    assert_eq!(trend.blown, 0);
}
