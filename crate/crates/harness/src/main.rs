use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lifelong_harness::config::{ConfigError, Experiment, ExperimentConfig};

/// Lifelong representation learning experiments.
///
/// Artifacts go to `$LIFELONG_OUTPUT_ROOT/<subcommand>` (default `runs/`)
/// unless `--output` is given.
#[derive(Parser)]
#[command(name = "lifelong", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Representation updates per (k, β) for the lifelong learner.
    Table1(Common),
    /// Cumulative sample and update curves for the learner and both baselines.
    Curves(Common),
    /// Held-out excess risk of every output, learner and baselines.
    Certify(Common),
    /// Exhaustive eluder lengths on random finite classes and the pointwise chain.
    Eluder(Common),
    /// Planted-signal detection accuracy against sample size.
    Hardness(Common),
    /// Ridge identity, constrained subspace distance and gradient checks.
    LemmaChecks(Common),
}

#[derive(Args)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set optimizer.solver=adam`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long, value_name = "LIST")]
    k: Option<String>,
    #[arg(long, value_name = "LIST")]
    beta: Option<String>,
    #[arg(long = "T")]
    tasks: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    output: Option<String>,
}

fn build(experiment: Experiment, args: &Common) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(experiment, path)?,
        None => ExperimentConfig::defaults(experiment),
    };
    let flags = [
        ("d", &args.d),
        ("k", &args.k),
        ("beta", &args.beta),
        ("T", &args.tasks),
        ("epsilon", &args.epsilon),
        ("trials", &args.trials),
        ("seed", &args.seed),
        ("output", &args.output),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    for o in &args.overrides {
        let (key, value) = o.split_once('=').ok_or_else(|| ConfigError {
            line: None,
            field: o.clone(),
            message: "expected KEY=VALUE".into(),
        })?;
        cfg.set(key.trim(), value.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match &cli.command {
        Command::Table1(a) => (Experiment::Table1, a),
        Command::Curves(a) => (Experiment::Curves, a),
        Command::Certify(a) => (Experiment::Certify, a),
        Command::Eluder(a) => (Experiment::EluderAudit, a),
        Command::Hardness(a) => (Experiment::HardnessDemo, a),
        Command::LemmaChecks(a) => (Experiment::LemmaChecks, a),
    };
    let cfg = match build(experiment, args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    match lifelong_harness::run(&cfg) {
        Ok(outcome) => {
            print!("{}", outcome.report);
            println!("artifacts: {}", outcome.dir.display());
            if outcome.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                for f in &outcome.failures {
                    eprintln!("failed: {f}");
                }
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
