use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mkv_milstein::experiment::{self, parse_assignment, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(
    name = "mkv-milstein",
    version,
    about = "Tamed Milstein schemes for McKean-Vlasov particle systems with jumps"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Simulate the particle system and write trajectories
    Simulate(Args),
    /// Estimate strong errors and the convergence rate
    Rate(Args),
    /// Compare system sizes on shared noise
    Poc(Args),
    /// Run the property suites
    Verify(Args),
    /// Probe the growth and taming bounds
    Probe(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    /// TOML experiment file
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; defaults to the config, then $MKV_MILSTEIN_OUT
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config key, e.g. `--set run.particles=200`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn load(name: &str, args: &Args) -> mkv_milstein::Result<ExperimentConfig> {
    let mut overrides = vec![("command".to_string(), format!("\"{name}\""))];
    if let Some(s) = args.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(t) = args.threads {
        overrides.push(("threads".into(), t.to_string()));
    }
    for s in &args.set {
        overrides.push(parse_assignment(s)?);
    }
    let mut cfg = ExperimentConfig::load(&args.config, &overrides)?;
    cfg.resolve_output(args.out.clone());
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (name, args) = match &cli.command {
        Cmd::Simulate(a) => ("simulate", a),
        Cmd::Rate(a) => ("rate", a),
        Cmd::Poc(a) => ("poc", a),
        Cmd::Verify(a) => ("verify", a),
        Cmd::Probe(a) => ("probe", a),
    };
    let result = load(name, args).and_then(|cfg| experiment::run(&cfg));
    match result {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiment::error_exit_code(&e) as u8)
        }
    }
}
