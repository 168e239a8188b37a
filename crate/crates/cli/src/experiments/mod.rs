//! Experiment drivers. Each returns rows plus checks and aggregates; nothing
//! here touches the filesystem.

use std::collections::BTreeMap;

use iclab_core::linalg::DiagonalMatrix;
use iclab_core::rng::RandomSource;
use iclab_core::Result;
use rayon::prelude::*;

use crate::config::{Experiment, ExperimentConfig};
use crate::output::{format_decimal, sort_rows, CheckResult, ResultRow, RowKey};

mod concentration;
mod decompose;
mod heads;
mod probe;
mod sweep;
mod verify;

pub use concentration::run_concentration;
pub use decompose::run_decompose;
pub use heads::run_heads;
pub use probe::run_probe;
pub use sweep::run_sweep;
pub use verify::run_verify;

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub checks: Vec<CheckResult>,
    pub aggregates: BTreeMap<String, f64>,
}

impl RunOutput {
    fn finish(mut self) -> Self {
        sort_rows(&mut self.rows);
        self
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let out = match cfg.experiment {
        Experiment::Verify => run_verify(cfg)?,
        Experiment::Sweep => run_sweep(cfg)?,
        Experiment::Heads => run_heads(cfg)?,
        Experiment::Concentration => run_concentration(cfg)?,
        Experiment::Probe => run_probe(cfg)?,
        Experiment::Decompose => run_decompose(cfg)?,
    };
    Ok(out.finish())
}

fn root_rng(cfg: &ExperimentConfig) -> RandomSource {
    RandomSource::new(cfg.seed).split(cfg.experiment.name())
}

fn cell_label(n: usize, sigma: f64) -> String {
    format!("n={n}/sigma={}", format_decimal(sigma))
}

fn covariance(cfg: &ExperimentConfig) -> DiagonalMatrix {
    if cfg.covariance.is_empty() {
        DiagonalMatrix::identity(cfg.d)
    } else {
        DiagonalMatrix::new(cfg.covariance.clone()).expect("validated covariance")
    }
}

fn key(cfg: &ExperimentConfig, n: usize, q: usize, sigma: f64) -> RowKey {
    RowKey {
        experiment: cfg.experiment.name().to_string(),
        d: cfg.d,
        s: cfg.s,
        n,
        q,
        sigma,
        seed: cfg.seed,
    }
}

/// Runs `f` for trials `0..count` in parallel; results come back in trial order.
fn par_trials<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

/// Running maximum of a normalized deviation for one named check.
#[derive(Debug, Clone)]
struct Check {
    name: &'static str,
    tolerance: f64,
    instances: usize,
    max_deviation: f64,
    detail: String,
}

impl Check {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            instances: 0,
            max_deviation: 0.0,
            detail: String::new(),
        }
    }

    /// NaN deviations count as failures.
    fn record(&mut self, deviation: f64) {
        self.instances += 1;
        if deviation.is_nan() || deviation > self.max_deviation {
            self.max_deviation = if deviation.is_nan() { f64::INFINITY } else { deviation };
        }
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    fn result(&self) -> CheckResult {
        CheckResult {
            name: self.name.to_string(),
            passed: self.max_deviation <= self.tolerance,
            instances: self.instances,
            max_deviation: self.max_deviation,
            tolerance: self.tolerance,
            detail: self.detail.clone(),
        }
    }
}

/// `|a − b| / max(|b|, 1)`.
fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn check_rows(cfg: &ExperimentConfig, checks: &[CheckResult]) -> Vec<ResultRow> {
    let k = RowKey {
        experiment: cfg.experiment.name().to_string(),
        d: cfg.d,
        s: cfg.s,
        n: 0,
        q: cfg.q,
        sigma: 0.0,
        seed: cfg.seed,
    };
    checks
        .iter()
        .flat_map(|c| {
            [
                k.row(&c.name, "max_deviation", c.max_deviation, None),
                k.row(&c.name, "passed", if c.passed { 1.0 } else { 0.0 }, None),
                k.row(&c.name, "instances", c.instances as f64, None),
            ]
        })
        .collect()
}
