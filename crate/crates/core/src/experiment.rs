//! Configuration-driven experiments: parsing, overrides, and the runner that
//! writes the manifest, CSVs and summary of one subcommand.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    self, ito_verify, noise_coupling_check, poc_experiment, pth_power_inequality_check, rate_study,
    ItoSpec, MeanEstimate, QuadraticMean,
};
use crate::config::{InitialLaw, RunConfig, SchemeKind, TamingMode};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::measure::measure_taylor_check;
use crate::model::{validate_model, Model, ProbePoint, VALIDATION_TOLERANCE};
use crate::models::BuiltinModel;
use crate::noise::sample_realization;
use crate::output::csv_writer;
use crate::schemes::{noise_spec_for, simulate, Record};
use crate::seed::{SeedSequence, Stream};
use crate::taming::{min_bounds_check, probe_assumptions, ProbeSpec};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable naming the output directory when neither the
/// config nor the command line does.
pub const OUTPUT_ENV: &str = "MKV_MILSTEIN_OUT";
pub const DEFAULT_OUTPUT: &str = "results";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Rate,
    Poc,
    Verify,
    Probe,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Rate => "rate",
            Command::Poc => "poc",
            Command::Verify => "verify",
            Command::Probe => "probe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub particles: usize,
    pub runs: usize,
    pub horizon: f64,
    pub steps: usize,
    pub scheme: SchemeKind,
    pub taming: TamingMode,
    /// Substeps per step for the Lévy-area sums.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    pub initial_mean: f64,
    pub initial_sd: f64,
}

fn default_substeps() -> usize {
    crate::config::DEFAULT_SUBSTEPS
}

fn default_threads() -> usize {
    1
}

fn default_epsilon() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordMode {
    Final,
    Path,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub record: RecordMode,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            record: RecordMode::Final,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSection {
    pub resolutions: Vec<usize>,
    pub n_ref: usize,
    pub schemes: Vec<SchemeKind>,
}

impl Default for RateSection {
    fn default() -> Self {
        Self {
            resolutions: vec![8, 16, 32, 64, 128, 256],
            n_ref: 4096,
            schemes: vec![SchemeKind::Milstein, SchemeKind::Euler],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PocSection {
    pub sizes: Vec<usize>,
    pub reference: usize,
}

impl Default for PocSection {
    fn default() -> Self {
        Self {
            sizes: vec![50, 100, 200, 400],
            reference: 3200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    /// Random configurations for the measure Taylor identity, per size.
    pub taylor_samples: usize,
    pub taylor_sizes: Vec<usize>,
    pub inequality_samples: usize,
    pub min_bound_samples: usize,
    pub min_bound_steps: Vec<usize>,
    pub coupling_samples: usize,
    pub ito_particles: usize,
    pub ito_runs: usize,
    pub ito_steps: usize,
    pub ito_tagged: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            taylor_samples: 1000,
            taylor_sizes: vec![2, 5, 50],
            inequality_samples: 100_000,
            min_bound_samples: 100_000,
            min_bound_steps: vec![1, 4, 64, 4096],
            coupling_samples: 100_000,
            ito_particles: 50,
            ito_runs: 100,
            ito_steps: 256,
            ito_tagged: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub radii: Vec<f64>,
    pub samples: usize,
    pub atoms: usize,
    pub steps: Vec<usize>,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let d = ProbeSpec::default();
        Self {
            radii: d.radii,
            samples: d.samples,
            atoms: d.atoms,
            steps: d.steps,
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Target rate parameter; only reported.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_version: Option<String>,
    pub model: ModelSection,
    pub run: RunSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub rate: RateSection,
    #[serde(default)]
    pub poc: PocSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub probe: ProbeSection,
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets the dotted `key` in `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("malformed override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => {
                return Err(Error::config(format!(
                    "override `{key}`: `{p}` is not a table"
                )))
            }
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw));
    Ok(())
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::config(format!(
            "override `{s}` is not of the form key=value"
        ))),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::with_overrides(text, &[])
    }

    /// Parses `text`, applies the dotted overrides in order, then checks the
    /// result.
    pub fn with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(e.message().to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::config(format!("seed must be at most {}", i64::MAX)));
        }
        if self.threads == 0 {
            return Err(Error::config("threads must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon must be positive"));
        }
        self.run_config()?.validate()?;
        self.build_model()?;
        Ok(())
    }

    pub fn build_model(&self) -> Result<BuiltinModel> {
        BuiltinModel::from_name(&self.model.name, &self.model.params)
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let r = &self.run;
        let grid = Grid::new(r.horizon, r.steps).map_err(|e| Error::config(e.to_string()))?;
        let mut cfg = RunConfig::new(r.particles, r.runs, self.seed, grid);
        cfg.threads = self.threads;
        cfg.scheme = r.scheme;
        cfg.taming = r.taming;
        cfg.substeps = r.substeps;
        cfg.initial = InitialLaw {
            mean: r.initial_mean,
            sd: r.initial_sd,
        };
        Ok(cfg)
    }

    /// `--out`, then the config, then [`OUTPUT_ENV`], then [`DEFAULT_OUTPUT`].
    pub fn resolve_output(&mut self, cli: Option<PathBuf>) {
        if let Some(p) = cli {
            self.output = Some(p);
        } else if self.output.is_none() {
            let env = std::env::var_os(OUTPUT_ENV).map(PathBuf::from);
            self.output = Some(env.unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT)));
        }
    }
}

/// What a finished experiment reports.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    /// 0 on success, 2 when the experiment ran but failed its own criteria.
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            2
        }
    }
}

/// Exit status for an error: 2 for experiment-level failures, 1 otherwise.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Experiment(_) => 2,
        _ => 1,
    }
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path)?;
        self.files.push(path);
        Ok(BufWriter::new(f))
    }
}

/// Runs the configured subcommand and writes `manifest.toml`, the CSVs and
/// `summary.txt` into the output directory.
pub fn run(config: &ExperimentConfig) -> Result<Outcome> {
    config.validate()?;
    let mut resolved = config.clone();
    resolved.resolve_output(None);
    resolved.code_version = Some(CODE_VERSION.to_string());
    let dir = resolved.output.clone().expect("resolved output");
    fs::create_dir_all(&dir)?;
    let mut w = Writer {
        dir,
        files: Vec::new(),
    };
    fs::write(w.dir.join("manifest.toml"), resolved.to_toml_string()?)?;
    w.files.push(w.dir.join("manifest.toml"));

    let model = resolved.build_model()?;
    let cfg = resolved.run_config()?;
    let mut summary = format!(
        "mkv-milstein {} {}: model {}, seed {}, threads {}, epsilon {}\n",
        CODE_VERSION,
        resolved.command.name(),
        resolved.model.name,
        resolved.seed,
        resolved.threads,
        resolved.epsilon
    );
    let result = match resolved.command {
        Command::Simulate => run_simulate(&resolved, &model, &cfg, &mut w),
        Command::Rate => run_rate(&resolved, &model, &cfg, &mut w),
        Command::Poc => run_poc(&resolved, &model, &cfg, &mut w),
        Command::Verify => run_verify(&resolved, &model, &cfg, &mut w),
        Command::Probe => run_probe(&resolved, &model, &mut w),
    };
    let (passed, body) = match result {
        Ok(v) => v,
        Err(Error::Experiment(msg)) => {
            summary.push_str(&format!("experiment failed: {msg}\n"));
            fs::write(w.dir.join("summary.txt"), &summary)?;
            return Err(Error::Experiment(msg));
        }
        Err(e) => return Err(e),
    };
    summary.push_str(&body);
    summary.push_str(if passed {
        "status: ok\n"
    } else {
        "status: FAILED\n"
    });
    fs::write(w.dir.join("summary.txt"), &summary)?;
    w.files.push(w.dir.join("summary.txt"));
    Ok(Outcome {
        passed,
        summary,
        files: w.files,
    })
}

fn run_simulate(
    exp: &ExperimentConfig,
    model: &BuiltinModel,
    cfg: &RunConfig,
    w: &mut Writer,
) -> Result<(bool, String)> {
    let n = cfg.grid.steps();
    let spec = noise_spec_for(model, cfg, n);
    let seeds = SeedSequence::new(cfg.seed);
    let record = match exp.simulate.record {
        RecordMode::Final => Record::FinalOnly,
        RecordMode::Path => Record::Path,
    };
    let trajs = analysis::map_runs(cfg.threads, cfg.runs, |run| {
        let real = sample_realization(&spec, model.marks(), &seeds, run)?;
        simulate(model, cfg, n, &real, record)
    })?;

    let mut out = csv_writer(w.create("trajectory.csv")?)?;
    out.write_record(["t", "run", "particle", "component", "value"])?;
    let d = model.state_dim();
    let grid = cfg.grid;
    let first = if record == Record::Path { 0 } else { n };
    for (run, tr) in trajs.iter().enumerate() {
        for k in first..=n {
            let t = grid.point(k).to_string();
            let x = tr.state_at(k).expect("recorded state");
            for i in 0..cfg.particles {
                for u in 0..d {
                    out.write_record([
                        t.as_str(),
                        &run.to_string(),
                        &i.to_string(),
                        &u.to_string(),
                        &x[i * d + u].to_string(),
                    ])?;
                }
            }
        }
    }
    out.flush()?;

    let mut means = Vec::with_capacity(trajs.len());
    let mut seconds = Vec::with_capacity(trajs.len());
    let mut blown = 0;
    for tr in &trajs {
        blown += tr.blow_ups();
        let x = tr.final_state();
        let np = cfg.particles as f64;
        means.push(x.iter().step_by(d).sum::<f64>() / np);
        seconds.push(
            x.chunks(d)
                .map(|v| v.iter().map(|a| a * a).sum::<f64>())
                .sum::<f64>()
                / np,
        );
    }
    let paths = cfg.runs * cfg.particles;
    let (m, q) = (
        MeanEstimate::from_samples(&means),
        MeanEstimate::from_samples(&seconds),
    );
    let mut s = format!(
        "simulate: scheme {}, taming {:?}, N = {}, R = {}, n = {}, T = {}\n",
        cfg.scheme.name(),
        cfg.taming,
        cfg.particles,
        cfg.runs,
        n,
        grid.horizon()
    );
    let _ = writeln!(
        s,
        "mean of first component at T: {:.6e} ± {:.2e}",
        m.mean, m.se
    );
    let _ = writeln!(s, "second moment at T: {:.6e} ± {:.2e}", q.mean, q.se);
    let _ = writeln!(s, "blow-ups: {blown}/{paths}");
    let fraction = blown as f64 / paths as f64;
    if fraction > analysis::MAX_EXCLUDED_FRACTION {
        let _ = writeln!(
            s,
            "blow-up fraction {fraction:.4} exceeds {}",
            analysis::MAX_EXCLUDED_FRACTION
        );
        return Ok((false, s));
    }
    Ok((true, s))
}

fn run_rate(
    exp: &ExperimentConfig,
    model: &BuiltinModel,
    cfg: &RunConfig,
    w: &mut Writer,
) -> Result<(bool, String)> {
    let mut s = String::new();
    let mut studies = Vec::new();
    for &scheme in &exp.rate.schemes {
        let mut c = cfg.clone();
        c.scheme = scheme;
        let study = rate_study(model, &c, &exp.rate.resolutions, exp.rate.n_ref)?;
        study.write_csv(w.create(&format!("rate_{}.csv", scheme.name()))?)?;
        s.push_str(&study.summary());
        studies.push(study);
    }
    let _ = writeln!(
        s,
        "target rms rate for epsilon = {}: {:.4}",
        exp.epsilon,
        0.5 + 1.0 / (exp.epsilon + 2.0)
    );
    Ok((true, s))
}

fn run_poc(
    exp: &ExperimentConfig,
    model: &BuiltinModel,
    cfg: &RunConfig,
    w: &mut Writer,
) -> Result<(bool, String)> {
    let study = poc_experiment(
        model,
        cfg,
        &exp.poc.sizes,
        exp.poc.reference,
        cfg.grid.steps(),
    )?;
    study.write_csv(w.create("poc.csv")?)?;
    Ok((true, study.summary()))
}

fn run_probe(
    exp: &ExperimentConfig,
    model: &BuiltinModel,
    w: &mut Writer,
) -> Result<(bool, String)> {
    let spec = ProbeSpec {
        radii: exp.probe.radii.clone(),
        samples: exp.probe.samples,
        atoms: exp.probe.atoms,
        steps: exp.probe.steps.clone(),
        epsilon: exp.epsilon,
        seed: exp.seed,
        ..ProbeSpec::default()
    };
    let report = probe_assumptions(model, &spec)?;
    report.write_csv(w.create("probe.csv")?)?;
    let mut s = String::from("assumption probe: largest ratio per family\n");
    let mut names: Vec<&str> = Vec::new();
    for r in &report.rows {
        if !names.contains(&r.assumption) {
            names.push(r.assumption);
        }
    }
    for name in names {
        let _ = writeln!(s, "  {name:<14} {:.6e}", report.max_for(name));
    }
    if !report.flagged.is_empty() {
        let _ = writeln!(s, "growing families: {}", report.flagged.join(", "));
    }
    if report.non_finite > 0 {
        let _ = writeln!(s, "non-finite evaluations: {}", report.non_finite);
    }
    Ok((report.passed(), s))
}

/// One line of `verify.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }

    fn below(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value < tolerance,
        }
    }
}

/// The property suites behind `verify`.
pub fn verify_checks(
    exp: &ExperimentConfig,
    model: &BuiltinModel,
    cfg: &RunConfig,
) -> Result<Vec<Check>> {
    let v = &exp.verify;
    let seeds = SeedSequence::new(exp.seed);
    let d = model.state_dim();
    let mut checks = Vec::new();

    let mut rng = seeds.rng(0, 0, Stream::Probe);
    let marks = model.marks();
    let points: Vec<ProbePoint> = (0..64)
        .map(|k| ProbePoint {
            x: (0..d).map(|_| rng.random_range(-3.0..3.0)).collect(),
            atoms: (0..5 * d).map(|_| rng.random_range(-3.0..3.0)).collect(),
            z: if marks.is_empty() {
                vec![0.0; marks.dim()]
            } else {
                marks.atom(k % marks.len()).to_vec()
            },
        })
        .collect();
    let report = validate_model(model, &points)?;
    checks.push(Check::at_most(
        "model_derivatives",
        report.max_discrepancy(),
        VALIDATION_TOLERANCE,
    ));

    let mut rng = seeds.rng(1, 0, Stream::Probe);
    let mut worst: f64 = 0.0;
    for &size in &v.taylor_sizes {
        for _ in 0..v.taylor_samples {
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x: Vec<f64> = (0..size * d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..size * d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let c = measure_taylor_check(&QuadraticMean, &z, &x, &y, d, 4)?;
            worst = worst.max(c.residual);
        }
    }
    checks.push(Check::below("measure_taylor", worst, 1e-10));

    let mut rng = seeds.rng(2, 0, Stream::Probe);
    let samples: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..v.inequality_samples)
        .map(|_| {
            let dim = rng.random_range(1..=3);
            let scale = 10f64.powf(rng.random_range(-2.0..2.0));
            let x = (0..dim)
                .map(|_| scale * rng.random_range(-1.0..1.0))
                .collect();
            let y = (0..dim)
                .map(|_| scale * rng.random_range(-1.0..1.0))
                .collect();
            let p = 4.0 + rng.random_range(f64::EPSILON..=8.0);
            (x, y, p)
        })
        .collect();
    let ineq = pth_power_inequality_check(&samples)?;
    checks.push(Check::at_most(
        "pth_power_violations",
        ineq.violations as f64,
        0.0,
    ));

    for &n in &v.min_bound_steps {
        let rows = min_bounds_check(model, n, v.min_bound_samples, 8, exp.seed)?;
        let violations: usize = rows.iter().map(|r| r.violations).sum();
        checks.push(Check::at_most(
            format!("min_bounds_n{n}"),
            violations as f64,
            0.0,
        ));
    }

    let coupling = noise_coupling_check(v.coupling_samples, exp.seed)?;
    checks.push(Check::at_most(
        "noise_pairwise_sums",
        coupling.sum_mismatches as f64,
        0.0,
    ));
    checks.push(Check::at_most(
        "noise_iterated_diagonal",
        coupling.iterated_mismatches as f64,
        0.0,
    ));
    let worst_z = coupling
        .moments
        .iter()
        .zip(&coupling.targets)
        .map(|(e, t)| (e.mean - t).abs() / e.se)
        .fold(0.0, f64::max);
    checks.push(Check::below("noise_covariance_z", worst_z, 3.0));

    let mut ito_cfg = cfg.clone();
    ito_cfg.taming = TamingMode::Off;
    ito_cfg.particles = v.ito_particles;
    ito_cfg.runs = v.ito_runs;
    ito_cfg.grid = Grid::new(cfg.grid.horizon(), v.ito_steps)?;
    let ito = ito_verify(
        model,
        &QuadraticMean,
        &ito_cfg,
        ItoSpec {
            tagged: v.ito_tagged.min(v.ito_particles),
            steps: v.ito_steps,
        },
    )?;
    checks.push(Check::below(
        "ito_difference_z",
        ito.difference.mean.abs() / ito.difference.se,
        3.0,
    ));
    Ok(checks)
}

fn run_verify(
    exp: &ExperimentConfig,
    model: &BuiltinModel,
    cfg: &RunConfig,
    w: &mut Writer,
) -> Result<(bool, String)> {
    let checks = verify_checks(exp, model, cfg)?;
    let mut out = csv_writer(w.create("verify.csv")?)?;
    out.write_record(["check", "value", "tolerance", "passed"])?;
    let mut s = String::from("verification suites\n");
    for c in &checks {
        out.write_record([
            c.name.clone(),
            c.value.to_string(),
            c.tolerance.to_string(),
            c.passed.to_string(),
        ])?;
        let _ = writeln!(
            s,
            "  {:<26} {:>12.4e}  tolerance {:.1e}  {}",
            c.name,
            c.value,
            c.tolerance,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    out.flush()?;
    Ok((checks.iter().all(|c| c.passed), s))
}
