//! Experiment driver for the `iclab` binary: configuration, seeded runs and
//! CSV/JSON output.

pub mod config;
pub mod experiments;
pub mod output;
pub mod stats;

use std::path::PathBuf;
use std::time::Instant;

use thiserror::Error;

use config::ExperimentConfig;
use output::{json_path_for, write_csv, write_json, OutputError, RunSummary};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Compute(#[from] iclab_core::Error),
    #[error(transparent)]
    Output(#[from] OutputError),
}

/// Where a finished run was written.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub summary: RunSummary,
}

/// Runs the configured experiment and writes the CSV and its JSON summary.
/// Elapsed time goes into the JSON only when `record_timing` is set, so
/// default outputs depend on nothing but the config.
pub fn execute(cfg: &ExperimentConfig, record_timing: bool) -> Result<RunArtifacts, RunError> {
    let start = Instant::now();
    let out = experiments::run(cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    let failed = out.checks.iter().filter(|c| !c.passed).count();
    let summary = RunSummary {
        experiment: cfg.experiment.name().to_string(),
        config: cfg.clone(),
        rows: out.rows.len(),
        passed: out.checks.len() - failed,
        failed,
        checks: out.checks,
        aggregates: out.aggregates,
        wall_clock_seconds: record_timing.then_some(elapsed),
    };
    let csv = cfg.output_path.clone();
    let json = json_path_for(&csv);
    write_csv(&out.rows, &csv)?;
    write_json(&summary, &json)?;
    Ok(RunArtifacts { csv, json, summary })
}
