//! Probing the first-layer output: fit GD on extracted query features.

use iclab_core::attention::{assemble_icl_model, extract_preprocessed, forward};
use iclab_core::estimators::gd_solve;
use iclab_core::linalg::{diag_apply, DenseVector};
use iclab_core::preprocess::reweighter_for;
use iclab_core::task::{
    build_prompt, excess_risk_pre, excess_risk_raw, sample_dataset, sample_task, Example,
};
use iclab_core::{Error, Result};

use super::{cell_label, covariance, key, par_trials, root_rng, Check, RunOutput};
use crate::config::ExperimentConfig;
use crate::stats::median;

struct ProbeTrial {
    extract_gap: f64,
    /// Indexed by probe step: (pre risk, pre η, raw risk, raw η).
    curves: Vec<[f64; 4]>,
    heldout: Vec<[f64; 2]>,
}

/// Runs t steps from zero; a diverged run maps to `None`.
fn gd_weights(train: &[Example], eta: f64, t: usize) -> Result<Option<DenseVector>> {
    match gd_solve(train, eta, t, &DenseVector::zeros(train[0].x.dim())) {
        Ok(traj) => Ok(Some(traj.last().clone())),
        Err(Error::Diverged { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Grid point minimizing `risk(w)`; ties go to the larger step size.
fn tuned<F>(train: &[Example], grid: &[f64], t: usize, risk: F) -> Result<(f64, f64, Option<DenseVector>)>
where
    F: Fn(&DenseVector) -> Result<f64>,
{
    let mut best = (f64::NAN, f64::INFINITY, None);
    for &eta in grid {
        let (r, w) = match gd_weights(train, eta, t)? {
            Some(w) => {
                let r = risk(&w)?;
                (if r.is_finite() { r } else { f64::INFINITY }, Some(w))
            }
            None => (f64::INFINITY, None),
        };
        if best.0.is_nan() || r < best.1 || (r == best.1 && eta > best.0) {
            best = (eta, r, w);
        }
    }
    Ok(best)
}

/// Fits GD on the first q−1 query columns (features from the first layer, or
/// raw features for comparison) and scores it on the population and on the
/// last query.
pub fn run_probe(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let root = root_rng(cfg);
    let cov = covariance(cfg);
    let mut out = RunOutput::default();
    let mut extract_check = Check::new("probe_extraction_matches_reweighting", 1e-12);
    for &n in &cfg.n {
        for &sigma in &cfg.sigma {
            let cell = root.split(&cell_label(n, sigma));
            let model = assemble_icl_model(cfg.d, n, cfg.eta, cfg.k)?;
            let trials = par_trials(cfg.trials, |trial| {
                let mut rng = cell.split_indexed("trial", trial as u64);
                let task = sample_task(cfg.d, cfg.s, &cov, sigma, cfg.prior, &mut rng)?;
                let (data, _) = sample_dataset(&task, n, cfg.q, &mut rng)?;
                let trace = forward(&model, &build_prompt(&data))?;
                let extracted = extract_preprocessed(&trace, cfg.d, n, cfg.q)?;
                let rhat = reweighter_for(&data)?;

                let mut extract_gap: f64 = 0.0;
                for (e, query) in extracted.iter().zip(data.queries()) {
                    let expect = diag_apply(rhat.matrix(), &query.x)?;
                    for j in 0..cfg.d {
                        extract_gap = extract_gap.max((e[j] - expect[j]).abs() / (1.0 + expect[j].abs()));
                    }
                }

                // Query labels are read only here, as probe training targets
                // and for the held-out score.
                let queries = data.queries();
                let train_pre: Vec<Example> = extracted[..cfg.q - 1]
                    .iter()
                    .zip(queries)
                    .map(|(x, qy)| Example { x: x.clone(), y: qy.label_for_evaluation() })
                    .collect();
                let train_raw: Vec<Example> = queries[..cfg.q - 1]
                    .iter()
                    .map(|qy| Example { x: qy.x.clone(), y: qy.label_for_evaluation() })
                    .collect();
                let (held_pre_x, held_raw_x) = (&extracted[cfg.q - 1], &queries[cfg.q - 1].x);
                let held_y = queries[cfg.q - 1].label_for_evaluation();

                let mut curves = Vec::with_capacity(cfg.probe_steps.len());
                let mut heldout = Vec::with_capacity(cfg.probe_steps.len());
                for &t in &cfg.probe_steps {
                    let (pre_eta, pre_risk, pre_w) =
                        tuned(&train_pre, &cfg.eta_grid, t, |w| excess_risk_pre(w, &rhat, &task))?;
                    let (raw_eta, raw_risk, raw_w) =
                        tuned(&train_raw, &cfg.eta_grid, t, |w| excess_risk_raw(w, &task))?;
                    let sq = |w: Option<DenseVector>, x: &DenseVector| -> Result<f64> {
                        Ok(match w {
                            Some(w) => (w.dot(x)? - held_y).powi(2),
                            None => f64::INFINITY,
                        })
                    };
                    curves.push([pre_risk, pre_eta, raw_risk, raw_eta]);
                    heldout.push([sq(pre_w, held_pre_x)?, sq(raw_w, held_raw_x)?]);
                }
                Ok(ProbeTrial { extract_gap, curves, heldout })
            })?;

            let k = key(cfg, n, cfg.q, sigma);
            for (trial, p) in trials.iter().enumerate() {
                extract_check.record(p.extract_gap);
                out.rows.push(k.row("extract", "max_gap", p.extract_gap, Some(trial)));
                for (i, &t) in cfg.probe_steps.iter().enumerate() {
                    let [pr, pe, rr, re] = p.curves[i];
                    let [ph, rh] = p.heldout[i];
                    for (label, risk, eta, held) in [("pre_probe", pr, pe, ph), ("raw_probe", rr, re, rh)] {
                        out.rows.push(k.row(label, &format!("excess_risk_t{t:05}"), risk, Some(trial)));
                        out.rows.push(k.row(label, &format!("tuned_eta_t{t:05}"), eta, Some(trial)));
                        out.rows.push(k.row(label, &format!("heldout_sq_error_t{t:05}"), held, Some(trial)));
                    }
                }
            }
            for (i, &t) in cfg.probe_steps.iter().enumerate() {
                for (label, col) in [("pre_probe", 0), ("raw_probe", 2)] {
                    let risks: Vec<f64> = trials.iter().map(|p| p.curves[i][col]).collect();
                    let m = median(&risks);
                    out.rows.push(k.row(label, &format!("median_excess_risk_t{t:05}"), m, None));
                    out.aggregates.insert(
                        format!("median_excess_risk/{label}/t={t}/{}", cell_label(n, sigma)),
                        m,
                    );
                }
            }
        }
    }
    out.checks.push(extract_check.result());
    Ok(out)
}
