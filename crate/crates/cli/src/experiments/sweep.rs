//! Excess risk of every estimator over an (n, σ) grid.

use iclab_core::estimators::{
    gd_risk_at, lasso_cd, ols_solve, ridge_solve, theoretical_schedule, tune_learning_rate, GdVariant,
};
use iclab_core::task::{excess_risk_raw, sample_dataset, sample_task, InContextDataset, SparseLinearTask};
use iclab_core::{Error, Result};

use super::{cell_label, covariance, key, par_trials, root_rng, RunOutput};
use crate::config::ExperimentConfig;
use crate::stats::median;

pub const ESTIMATORS: [&str; 6] = ["lasso", "ols", "pre_gd", "pre_gd_schedule", "raw_gd", "ridge"];

/// Tuned excess risk and the chosen hyperparameter (NaN for OLS).
struct Fit {
    estimator: &'static str,
    risk: f64,
    param: f64,
}

/// Lowest-risk grid point; ties go to the larger parameter. Failed fits count
/// as infinite risk.
fn tune<F>(grid: &[f64], mut risk_at: F) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut best = (f64::NAN, f64::INFINITY);
    for &p in grid {
        let r = risk_at(p)?;
        let r = if r.is_finite() { r } else { f64::INFINITY };
        if best.0.is_nan() || r < best.1 || (r == best.1 && p > best.0) {
            best = (p, r);
        }
    }
    Ok(best)
}

fn fit_all(cfg: &ExperimentConfig, task: &SparseLinearTask, data: &InContextDataset) -> Result<Vec<Fit>> {
    let mut fits = Vec::with_capacity(ESTIMATORS.len());
    for (name, variant) in [("pre_gd", GdVariant::PreGd), ("raw_gd", GdVariant::RawGd)] {
        let t = tune_learning_rate(variant, data, task, cfg.steps, &cfg.eta_grid)?;
        fits.push(Fit { estimator: name, risk: t.risk, param: t.eta });
    }

    // Step size and count from the risk bound, using the population R.
    let sched = theoretical_schedule(task, data.n(), cfg.delta)?;
    let risk = gd_risk_at(GdVariant::PreGd, data, task, sched.eta, sched.steps)?;
    fits.push(Fit { estimator: "pre_gd_schedule", risk, param: sched.steps as f64 });

    let (lambda, risk) = tune(&cfg.ridge_grid, |l| match ridge_solve(data.examples(), l) {
        Ok(w) => excess_risk_raw(&w, task),
        Err(Error::Singular(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    })?;
    fits.push(Fit { estimator: "ridge", risk, param: lambda });

    let ols = ols_solve(data.examples())?;
    fits.push(Fit { estimator: "ols", risk: excess_risk_raw(&ols.weights, task)?, param: f64::NAN });

    let (alpha, risk) = tune(&cfg.lasso_grid, |a| {
        let fit = lasso_cd(data.examples(), a, cfg.lasso_max_sweeps, cfg.lasso_tol)?;
        excess_risk_raw(&fit.weights, task)
    })?;
    fits.push(Fit { estimator: "lasso", risk, param: alpha });
    Ok(fits)
}

fn param_metric(estimator: &str) -> &'static str {
    match estimator {
        "pre_gd" | "raw_gd" => "tuned_eta",
        "ridge" => "tuned_lambda",
        "pre_gd_schedule" => "schedule_steps",
        _ => "tuned_alpha",
    }
}

/// Per (n, σ, trial): tuned pre-GD, raw GD, ridge, Lasso, OLS, and pre-GD
/// on the theoretical schedule.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let root = root_rng(cfg);
    let cov = covariance(cfg);
    let mut out = RunOutput::default();
    for &n in &cfg.n {
        for &sigma in &cfg.sigma {
            let cell = root.split(&cell_label(n, sigma));
            let k = key(cfg, n, cfg.q, sigma);
            let trials = par_trials(cfg.trials, |trial| {
                let mut rng = cell.split_indexed("trial", trial as u64);
                let task = sample_task(cfg.d, cfg.s, &cov, sigma, cfg.prior, &mut rng)?;
                let (data, _) = sample_dataset(&task, n, cfg.q, &mut rng)?;
                fit_all(cfg, &task, &data)
            })?;
            for (trial, fits) in trials.iter().enumerate() {
                for f in fits {
                    out.rows.push(k.row(f.estimator, "excess_risk", f.risk, Some(trial)));
                    if !f.param.is_nan() {
                        out.rows.push(k.row(f.estimator, param_metric(f.estimator), f.param, Some(trial)));
                    }
                }
            }
            for name in ESTIMATORS {
                let risks: Vec<f64> = trials
                    .iter()
                    .map(|fits| {
                        fits.iter()
                            .find(|f| f.estimator == name)
                            .map(|f| f.risk)
                            .expect("every estimator is fit")
                    })
                    .collect();
                let m = median(&risks);
                out.rows.push(k.row(name, "median_excess_risk", m, None));
                out.aggregates.insert(
                    format!("median_excess_risk/{}/{}", name, cell_label(n, sigma)),
                    m,
                );
            }
        }
    }
    Ok(out)
}
