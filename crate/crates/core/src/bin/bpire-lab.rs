use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use bpire::config::{parse_config_for, ExperimentConfig, ExperimentKind, OutputFormat, Overrides};
use bpire::runner::{exit_code, run};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  I/O failure
  2  configuration error
  3  environment violates a model assumption
  4  resource limit reached";

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Validate,
    Bpire,
    Walk,
    Couple,
    Ladder,
    Ar,
    Classify,
    ReproduceExample,
}

impl From<Kind> for ExperimentKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Validate => Self::Validate,
            Kind::Bpire => Self::Bpire,
            Kind::Walk => Self::Walk,
            Kind::Couple => Self::Couple,
            Kind::Ladder => Self::Ladder,
            Kind::Ar => Self::Ar,
            Kind::Classify => Self::Classify,
            Kind::ReproduceExample => Self::ReproduceExample,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Seeded experiments on branching processes with immigration in random
/// environment and the excited random walks they encode.
#[derive(Debug, Parser)]
#[command(name = "bpire-lab", version, after_help = EXIT_CODES)]
struct Cli {
    /// Experiment kind.
    #[arg(value_enum)]
    kind: Kind,
    /// TOML or JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<u64>,
    /// Replaces the configured horizons with this single value.
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, env = "BPIRE_OUT_DIR")]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Allow p = 1/2 almost surely.
    #[arg(long)]
    classical_mode: bool,
    #[arg(long)]
    exact_threshold: Option<u64>,
}

fn load(cli: &Cli) -> bpire::Result<ExperimentConfig> {
    let kind = ExperimentKind::from(cli.kind);
    let base = match &cli.config {
        Some(path) => parse_config_for(&std::fs::read_to_string(path)?, Some(kind))?,
        None => parse_config_for("", Some(kind))?,
    };
    base.apply(&Overrides {
        seed: cli.seed,
        replicas: cli.replicas,
        horizon: cli.horizon,
        workers: cli.workers,
        out_dir: cli.out_dir.clone(),
        format: cli.format.map(|f| match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }),
        classical_mode: cli.classical_mode,
        exact_threshold: cli.exact_threshold,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            let code = if matches!(e, bpire::Error::Io(_)) { 2 } else { exit_code(&e) };
            return ExitCode::from(code as u8);
        }
    };
    let report = run(&config);
    if let Some(m) = &report.message {
        eprintln!("{}: {m}", if report.exit_code == 0 { "note" } else { "error" });
    }
    if let Some(s) = &report.summary {
        if let Some(v) = s.get("verdict").and_then(|v| v.as_str()) {
            println!("verdict: {v}");
        }
    }
    println!("wrote {}", report.out_dir.display());
    ExitCode::from(report.exit_code as u8)
}
