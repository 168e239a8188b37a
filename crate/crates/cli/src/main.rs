use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use iclab::config::{ConfigError, Experiment, ExperimentConfig};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;

/// Seeded in-context regression experiments.
#[derive(Debug, Parser)]
#[command(name = "iclab", version)]
struct Cli {
    /// verify | sweep | heads | concentration | probe | decompose
    experiment: String,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path; the JSON summary is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value`, applied after the config file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Record wall-clock time in the JSON summary (makes it non-reproducible).
    #[arg(long)]
    timing: bool,
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let experiment: Experiment = cli.experiment.parse()?;
    let mut cfg = ExperimentConfig::defaults(experiment);
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for pair in &cli.overrides {
        cfg.apply_override(pair)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_path = out.clone();
    }
    if cfg.experiment != experiment {
        return Err(ConfigError::Invalid(format!(
            "config selects experiment {} but the command line asked for {experiment}",
            cfg.experiment
        )));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let start = Instant::now();
    let artifacts = match iclab::execute(&cfg, cli.timing) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    for c in &artifacts.summary.checks {
        println!(
            "{} {:<50} max deviation {:.3e} (tolerance {:.0e}, {} instances){}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.max_deviation,
            c.tolerance,
            c.instances,
            if c.detail.is_empty() { String::new() } else { format!("; {}", c.detail) }
        );
    }
    println!(
        "{}: {} rows -> {} ({} checks passed, {} failed)",
        cfg.experiment,
        artifacts.summary.rows,
        artifacts.csv.display(),
        artifacts.summary.passed,
        artifacts.summary.failed
    );
    eprintln!("elapsed {:.2}s", start.elapsed().as_secs_f64());
    if artifacts.summary.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK_FAILED)
    }
}
