//! Bias, variance and cross terms of GD excess risk over random instances.

use iclab_core::estimators::{decompose_pre_gd, decompose_raw_gd, RiskDecomposition};
use iclab_core::{Error, Result};
use iclab_core::task::{sample_dataset, sample_task};

use super::{cell_label, covariance, key, par_trials, root_rng, Check, RunOutput};
use crate::config::ExperimentConfig;
use crate::stats::mean;

const METRICS: [&str; 6] = ["bias", "variance", "cross", "total", "two_term_gap", "three_term_gap"];

fn values(d: &Option<RiskDecomposition>) -> [f64; 6] {
    match d {
        Some(d) => [d.bias, d.variance, d.cross, d.total, d.two_term_gap(), d.three_term_gap()],
        None => [f64::INFINITY; 6],
    }
}

fn diverged_as_none(r: Result<RiskDecomposition>) -> Result<Option<RiskDecomposition>> {
    match r {
        Ok(d) => Ok(Some(d)),
        Err(Error::Diverged { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Per trial, pre-GD and raw GD at step size `eta` after `steps` steps.
pub fn run_decompose(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let root = root_rng(cfg);
    let cov = covariance(cfg);
    let mut out = RunOutput::default();
    let mut identity = Check::new("decomposition_three_term_identity", 1e-8);
    for &n in &cfg.n {
        for &sigma in &cfg.sigma {
            let label = cell_label(n, sigma);
            let cell = root.split(&label);
            let trials = par_trials(cfg.trials, |trial| {
                let mut rng = cell.split_indexed("trial", trial as u64);
                let task = sample_task(cfg.d, cfg.s, &cov, sigma, cfg.prior, &mut rng)?;
                let (data, noise) = sample_dataset(&task, n, cfg.q, &mut rng)?;
                Ok([
                    diverged_as_none(decompose_pre_gd(&data, &noise, &task, cfg.eta, cfg.steps))?,
                    diverged_as_none(decompose_raw_gd(&data, &noise, &task, cfg.eta, cfg.steps))?,
                ])
            })?;
            let k = key(cfg, n, cfg.q, sigma);
            for (e, name) in ["pre_gd", "raw_gd"].into_iter().enumerate() {
                let mut cols: [Vec<f64>; 6] = Default::default();
                for (trial, pair) in trials.iter().enumerate() {
                    let v = values(&pair[e]);
                    if let Some(d) = &pair[e] {
                        identity.record(d.three_term_gap() / (1.0 + d.total));
                    }
                    for (m, metric) in METRICS.iter().enumerate() {
                        out.rows.push(k.row(name, metric, v[m], Some(trial)));
                        cols[m].push(v[m]);
                    }
                }
                for (m, metric) in METRICS.iter().enumerate() {
                    let avg = mean(&cols[m]);
                    out.rows.push(k.row(name, &format!("mean_{metric}"), avg, None));
                    out.aggregates.insert(format!("mean_{metric}/{name}/{label}"), avg);
                }
                let max_two = cols[4].iter().copied().fold(0.0, f64::max);
                out.aggregates.insert(format!("max_two_term_gap/{name}/{label}"), max_two);
            }
        }
    }
    out.checks.push(identity.result());
    Ok(out)
}
