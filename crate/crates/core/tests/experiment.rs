use std::fs;

use mkv_milstein::experiment::{
    apply_override, error_exit_code, parse_assignment, run, Command, ExperimentConfig,
};
use mkv_milstein::Error;

const BASE: &str = r#"
command = "rate"
seed = 11

[model]
name = "mean_field_ou_jump"
params = { s1 = 0.4 }

[run]
particles = 20
runs = 3
horizon = 1.0
steps = 32
scheme = "milstein"
taming = "on"
initial_mean = 1.0
initial_sd = 0.5

[rate]
resolutions = [4, 8, 16, 32]
n_ref = 128
"#;

fn overrides(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[test]
fn parse_serialize_parse_is_a_fixpoint() {
    let a = ExperimentConfig::from_toml_str(BASE).unwrap();
    let text = a.to_toml_string().unwrap();
    let b = ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(a, b);
    assert_eq!(text, b.to_toml_string().unwrap());
    assert_eq!(a.threads, 1);
    assert_eq!(a.run.substeps, 32);
    assert_eq!(a.model.params["s1"], 0.4);
}

#[test]
fn unknown_keys_are_rejected_and_named() {
    for (key, text) in [
        ("colour", format!("colour = 1\n{BASE}")),
        ("stepz", BASE.replace("steps = 32", "stepz = 32")),
    ] {
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config(msg)) => assert!(msg.contains(key), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn missing_keys_are_named() {
    let text = BASE.replace("particles = 20\n", "");
    match ExperimentConfig::from_toml_str(&text) {
        Err(e @ Error::Config(_)) => {
            assert!(e.to_string().contains("particles"), "{e}");
            assert_eq!(error_exit_code(&e), 1);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn dotted_overrides_apply_in_order() {
    let cfg = ExperimentConfig::with_overrides(
        BASE,
        &overrides(&[
            ("run.particles", "7"),
            ("run.scheme", "euler"),
            ("model.params.a", "-1.5"),
            ("command", "poc"),
            ("run.particles", "9"),
        ]),
    )
    .unwrap();
    assert_eq!(cfg.run.particles, 9);
    assert_eq!(cfg.command, Command::Poc);
    assert_eq!(cfg.model.params["a"], -1.5);
    assert_eq!(cfg.run.scheme.name(), "euler");
}

#[test]
fn bad_overrides_are_config_errors() {
    assert!(parse_assignment("novalue").is_err());
    assert_eq!(
        parse_assignment("a.b = 3").unwrap(),
        ("a.b".into(), "3".into())
    );
    let mut t: toml::Table = BASE.parse().unwrap();
    assert!(apply_override(&mut t, "seed.x", "1").is_err());
    assert!(apply_override(&mut t, "run..x", "1").is_err());
    assert!(
        ExperimentConfig::with_overrides(BASE, &overrides(&[("run.taming", "maybe")])).is_err()
    );
    assert!(ExperimentConfig::with_overrides(BASE, &overrides(&[("model.name", "nope")])).is_err());
    assert!(
        ExperimentConfig::with_overrides(BASE, &overrides(&[("model.params.zz", "1")])).is_err()
    );
}

#[test]
fn oversized_seed_is_rejected() {
    let mut cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
    cfg.seed = u64::MAX;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

#[test]
fn rate_run_writes_manifest_csvs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::with_overrides(
        BASE,
        &overrides(&[("output", &format!("\"{}\"", dir.path().display()))]),
    )
    .unwrap();
    let outcome = run(&cfg).unwrap();
    assert!(outcome.passed);
    assert_eq!(outcome.exit_code(), 0);
    for f in [
        "manifest.toml",
        "rate_milstein.csv",
        "rate_euler.csv",
        "summary.txt",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(dir.path().join("rate_milstein.csv")).unwrap();
    assert!(
        csv.starts_with("# mkv-milstein schema v1\nn,mse,mse_ci_lo,mse_ci_hi,rms_rate_running\n")
    );
    let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("fitted rms rate"));

    // the manifest alone reproduces the run
    let manifest = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    let again = tempfile::tempdir().unwrap();
    let cfg2 = ExperimentConfig::with_overrides(
        &manifest,
        &overrides(&[("output", &format!("\"{}\"", again.path().display()))]),
    )
    .unwrap();
    assert!(cfg2.code_version.is_some());
    run(&cfg2).unwrap();
    for f in ["rate_milstein.csv", "rate_euler.csv"] {
        assert_eq!(
            fs::read(dir.path().join(f)).unwrap(),
            fs::read(again.path().join(f)).unwrap()
        );
    }
}

#[test]
fn simulate_records_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::with_overrides(
        BASE,
        &overrides(&[
            ("command", "simulate"),
            ("simulate.record", "path"),
            ("run.particles", "3"),
            ("run.runs", "2"),
            ("run.steps", "4"),
            ("output", &format!("\"{}\"", dir.path().display())),
        ]),
    )
    .unwrap();
    assert!(run(&cfg).unwrap().passed);
    let text = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# mkv-milstein schema v1"));
    assert_eq!(lines.next(), Some("t,run,particle,component,value"));
    assert_eq!(lines.count(), 5 * 2 * 3);
}

#[test]
fn blow_ups_beyond_the_limit_fail_the_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::with_overrides(
        BASE,
        &overrides(&[
            ("command", "simulate"),
            ("model.name", "cubic_mean_field"),
            ("model.params", "{}"),
            ("run.taming", "off"),
            ("run.steps", "4"),
            ("run.runs", "5"),
            ("run.initial_mean", "0.0"),
            ("run.initial_sd", "3.0"),
            ("output", &format!("\"{}\"", dir.path().display())),
        ]),
    )
    .unwrap();
    let outcome = run(&cfg).unwrap();
    assert!(!outcome.passed);
    assert_eq!(outcome.exit_code(), 2);
}

#[test]
fn probe_writes_its_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::with_overrides(
        BASE,
        &overrides(&[
            ("command", "probe"),
            ("probe.samples", "100"),
            ("output", &format!("\"{}\"", dir.path().display())),
        ]),
    )
    .unwrap();
    assert!(run(&cfg).unwrap().passed);
    let text = fs::read_to_string(dir.path().join("probe.csv")).unwrap();
    assert!(text
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("assumption,n,radius,max_ratio,argmax_x"));
}

#[test]
fn verify_reports_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::with_overrides(
        BASE,
        &overrides(&[
            ("command", "verify"),
            ("verify.taylor_samples", "20"),
            ("verify.inequality_samples", "2000"),
            ("verify.min_bound_samples", "2000"),
            ("verify.coupling_samples", "10000"),
            ("verify.ito_runs", "10"),
            ("verify.ito_steps", "32"),
            ("output", &format!("\"{}\"", dir.path().display())),
        ]),
    )
    .unwrap();
    let outcome = run(&cfg).unwrap();
    assert!(outcome.passed, "{}", outcome.summary);
    let text = fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    assert_eq!(text.lines().nth(1), Some("check,value,tolerance,passed"));
    assert!(text.lines().skip(2).all(|l| l.ends_with(",true")));
    assert!(text.contains("ito_difference_z"));
    assert!(text.contains("noise_pairwise_sums"));
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path, &[])
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
