//! How fast the estimated reweighter approaches its population value.

use iclab_core::preprocess::{population_reweighter, reweighter_for, reweighter_gap};
use iclab_core::task::{sample_dataset, sample_task};
use iclab_core::Result;

use super::{cell_label, covariance, key, par_trials, root_rng, RunOutput};
use crate::config::ExperimentConfig;
use crate::stats::{mean, ols_slope};

/// Per (n, trial): `‖R̂ − R‖₂`. Per σ: the log–log slope against n, both of
/// the log of the mean gap and of the mean log gap.
pub fn run_concentration(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let root = root_rng(cfg);
    let cov = covariance(cfg);
    let mut out = RunOutput::default();
    for &sigma in &cfg.sigma {
        let (mut log_n, mut log_mean, mut mean_log) = (Vec::new(), Vec::new(), Vec::new());
        for &n in &cfg.n {
            let cell = root.split(&cell_label(n, sigma));
            let gaps = par_trials(cfg.trials, |trial| {
                let mut rng = cell.split_indexed("trial", trial as u64);
                let task = sample_task(cfg.d, cfg.s, &cov, sigma, cfg.prior, &mut rng)?;
                let (data, _) = sample_dataset(&task, n, 1, &mut rng)?;
                Ok(reweighter_gap(&reweighter_for(&data)?, &population_reweighter(&task)))
            })?;
            let k = key(cfg, n, 1, sigma);
            for (trial, g) in gaps.iter().enumerate() {
                out.rows.push(k.row("rhat", "gap", *g, Some(trial)));
            }
            let m = mean(&gaps);
            let ml = mean(&gaps.iter().map(|g| g.ln()).collect::<Vec<_>>());
            out.rows.push(k.row("rhat", "mean_gap", m, None));
            out.rows.push(k.row("rhat", "mean_log_gap", ml, None));
            log_n.push((n as f64).ln());
            log_mean.push(m.ln());
            mean_log.push(ml);
        }
        let k = key(cfg, 0, 1, sigma);
        let slope = ols_slope(&log_n, &log_mean);
        let slope_of_logs = ols_slope(&log_n, &mean_log);
        out.rows.push(k.row("rhat", "slope_log_mean_gap", slope, None));
        out.rows.push(k.row("rhat", "slope_mean_log_gap", slope_of_logs, None));
        let tag = crate::output::format_decimal(sigma);
        out.aggregates.insert(format!("slope_log_mean_gap/sigma={tag}"), slope);
        out.aggregates.insert(format!("slope_mean_log_gap/sigma={tag}"), slope_of_logs);
    }
    Ok(out)
}
