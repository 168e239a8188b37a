//! Masking-based head importance on the constructed model.

use iclab_core::attention::{assemble_icl_model, head_importance, HeadImportance};
use iclab_core::task::{sample_dataset, sample_task_on_support};
use iclab_core::Result;

use super::{cell_label, covariance, key, par_trials, root_rng, RunOutput};
use crate::config::ExperimentConfig;

/// All eval instances of one cell share a support, so "support heads" is a
/// fixed set of first-layer heads.
pub fn run_heads(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let root = root_rng(cfg);
    let cov = covariance(cfg);
    let mut out = RunOutput::default();
    for &n in &cfg.n {
        for &sigma in &cfg.sigma {
            let label = cell_label(n, sigma);
            let cell = root.split(&label);
            let mut support: Vec<usize> = cell.split("support").permutation(cfg.d);
            support.truncate(cfg.s);
            support.sort_unstable();

            let eval = par_trials(cfg.trials, |i| {
                let mut rng = cell.split_indexed("instance", i as u64);
                let task = sample_task_on_support(cfg.d, support.clone(), &cov, sigma, cfg.prior, &mut rng)?;
                let (data, _) = sample_dataset(&task, n, cfg.q, &mut rng)?;
                Ok((task, data))
            })?;
            let model = assemble_icl_model(cfg.d, n, cfg.eta, cfg.k)?;
            let imp = head_importance(&model, &eval)?;

            let k = key(cfg, n, cfg.q, sigma);
            emit(&mut out, &k, &imp);
            let mass: f64 = support.iter().map(|&j| imp.normalized[0][j]).sum();
            out.rows.push(k.row("L1", "support_mass", mass, None));
            out.aggregates.insert(format!("support_mass/{label}"), mass);
            out.aggregates.insert(format!("baseline_error/{label}"), imp.baseline_error);
        }
    }
    Ok(out)
}

fn emit(out: &mut RunOutput, k: &crate::output::RowKey, imp: &HeadImportance) {
    for (i, (row, raw)) in imp.normalized.iter().zip(&imp.raw_deltas).enumerate() {
        let layer = format!("L{}", i + 1);
        for (j, (w, delta)) in row.iter().zip(raw).enumerate() {
            let head = format!("{layer}H{}", j + 1);
            out.rows.push(k.row(&head, "importance", *w, None));
            out.rows.push(k.row(&head, "delta_error", *delta, None));
        }
        out.rows.push(k.row(&layer, "flagged", if imp.flagged[i] { 1.0 } else { 0.0 }, None));
        out.rows.push(k.row(&layer, "row_sum", row.iter().sum(), None));
    }
    out.rows.push(k.row("model", "baseline_error", imp.baseline_error, None));
}
