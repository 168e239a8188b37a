//! Randomized checks of the constructed model against its closed-form oracles.

use iclab_core::attention::{assemble_icl_model, extract_preprocessed, forward, mask_head, unmask_head};
use iclab_core::estimators::{
    decompose_pre_gd, decompose_raw_gd, gd_solve, ols_solve, pre_gd_solve, ridge_solve,
};
use iclab_core::linalg::{diag_apply, DenseVector, DiagonalMatrix};
use iclab_core::preprocess::{apply_preprocess, reweighter_for, DiagonalReweighter};
use iclab_core::rng::RandomSource;
use iclab_core::task::{
    build_prompt, excess_risk_raw, sample_dataset, sample_task, InContextDataset, SparseLinearTask,
};
use iclab_core::Result;

use super::{check_rows, par_trials, rel_dev, root_rng, Check, RunOutput};
use crate::config::ExperimentConfig;

const DIMS: [usize; 4] = [2, 4, 8, 16];
const SIGMAS: [f64; 3] = [0.0, 0.1, 0.5];
const MASKING_INSTANCES: usize = 40;
const INDEPENDENCE_INSTANCES: usize = 20;

struct Instance {
    task: SparseLinearTask,
    data: InContextDataset,
    noise: DenseVector,
}

fn random_instance(
    cfg: &ExperimentConfig,
    rng: &mut RandomSource,
    dims: &[usize],
    n_range: (usize, usize),
    sigmas: &[f64],
) -> Result<Instance> {
    let d = dims[rng.below(dims.len())];
    let s = 1 + rng.below((d / 2).max(1));
    let n = n_range.0 + rng.below(n_range.1 - n_range.0 + 1);
    let sigma = sigmas[rng.below(sigmas.len())];
    let task = sample_task(d, s, &DiagonalMatrix::identity(d), sigma, cfg.prior, rng)?;
    let (data, noise) = sample_dataset(&task, n, cfg.q, rng)?;
    Ok(Instance { task, data, noise })
}

fn single_query(data: &InContextDataset, c: usize) -> Result<InContextDataset> {
    InContextDataset::new(data.examples().to_vec(), vec![data.queries()[c].clone()])
}

/// Per-instance deviations from the equivalence family of checks.
#[derive(Default)]
struct EquivalenceOutcome {
    rel: f64,
    abs: f64,
    prediction_at_abs: f64,
    independence: Option<f64>,
    extract: f64,
    one_step: f64,
    ridge_vs_ols: Option<f64>,
    ols_noiseless: Option<f64>,
}

fn equivalence_instance(cfg: &ExperimentConfig, root: &RandomSource, i: usize) -> Result<EquivalenceOutcome> {
    let mut rng = root.split_indexed("equivalence", i as u64);
    let Instance { task, data, .. } = random_instance(cfg, &mut rng, &DIMS, (8, 64), &SIGMAS)?;
    let (d, n, q) = (data.dim(), data.n(), data.q());
    let k = rng.below(9);
    let mut model = assemble_icl_model(d, n, cfg.eta, k)?;
    if cfg.corrupt_output_sign {
        model = model.with_negated_readout();
    }
    let trace = forward(&model, &build_prompt(&data))?;
    let traj = pre_gd_solve(&data, cfg.eta, k)?;
    let rhat = traj.reweighter().expect("preprocessed trajectory").clone();

    let mut out = EquivalenceOutcome::default();
    for (c, query) in data.queries().iter().enumerate() {
        let x_tilde = diag_apply(rhat.matrix(), &query.x)?;
        let oracle = traj.last().dot(&x_tilde)?;
        let y_hat = trace.predictions[n + c];
        out.rel = out.rel.max(rel_dev(y_hat, oracle));
        let abs = (y_hat - oracle).abs();
        if abs >= out.abs {
            out.abs = abs;
            out.prediction_at_abs = y_hat;
        }
    }

    let extracted = extract_preprocessed(&trace, d, n, q)?;
    for (e, query) in extracted.iter().zip(data.queries()) {
        let expect = diag_apply(rhat.matrix(), &query.x)?;
        for j in 0..d {
            out.extract = out.extract.max((e[j] - expect[j]).abs() / (1.0 + expect[j].abs()));
        }
    }

    if i < INDEPENDENCE_INSTANCES {
        let mut worst: f64 = 0.0;
        for c in 0..q {
            let alone = forward(&model, &build_prompt(&single_query(&data, c)?))?;
            if alone.predictions[n].to_bits() != trace.predictions[n + c].to_bits() {
                worst = worst.max((alone.predictions[n] - trace.predictions[n + c]).abs().max(f64::MIN_POSITIVE));
            }
        }
        out.independence = Some(worst);
    }

    let one = pre_gd_solve(&data, cfg.eta, 1)?;
    for j in 0..d {
        let r = rhat.diagonal()[j];
        out.one_step = out.one_step.max(rel_dev(one.last()[j], cfg.eta * r * r));
    }

    if n >= 2 * d {
        let ols = ols_solve(data.examples())?;
        let ridge = ridge_solve(data.examples(), 0.0)?;
        let scale = 1.0 + ols.weights.max_abs();
        out.ridge_vs_ols = Some(ridge.sub(&ols.weights)?.max_abs() / scale);
        if task.noise_std() == 0.0 {
            out.ols_noiseless = Some(excess_risk_raw(&ols.weights, &task)?);
        }
    }
    Ok(out)
}

struct DecompositionOutcome {
    three_term: f64,
    two_term_exact: Option<f64>,
    two_term_any: f64,
}

fn trace_of_second_moment(data: &InContextDataset) -> f64 {
    data.examples()
        .iter()
        .map(|e| e.x.as_slice().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / data.n() as f64
}

fn decomposition_instance(cfg: &ExperimentConfig, root: &RandomSource, i: usize) -> Result<DecompositionOutcome> {
    let mut rng = root.split_indexed("decomposition", i as u64);
    let Instance { task, data, noise } = random_instance(cfg, &mut rng, &DIMS, (8, 64), &SIGMAS)?;
    let t = rng.below(17);
    let c_pre = rng.uniform_range(0.1, 1.5);
    let c_raw = rng.uniform_range(0.1, 1.5);

    let rhat = reweighter_for(&data)?;
    let tr_pre = trace_of_second_moment(&apply_preprocess(&data, &rhat)?);
    let tr_raw = trace_of_second_moment(&data);
    let mut decomps = vec![decompose_raw_gd(&data, &noise, &task, c_raw / tr_raw, t)?];
    if tr_pre > 0.0 {
        decomps.push(decompose_pre_gd(&data, &noise, &task, c_pre / tr_pre, t)?);
    }

    let exact = task.noise_std() == 0.0 || t == 0;
    let mut out = DecompositionOutcome {
        three_term: 0.0,
        two_term_exact: exact.then_some(0.0),
        two_term_any: 0.0,
    };
    for dec in &decomps {
        let scale = 1.0 + dec.total;
        out.three_term = out.three_term.max(dec.three_term_gap() / scale);
        let two = dec.two_term_gap() / scale;
        out.two_term_any = out.two_term_any.max(two);
        if let Some(m) = out.two_term_exact.as_mut() {
            *m = m.max(two);
        }
    }
    Ok(out)
}

#[derive(Default)]
struct MaskingOutcome {
    gd_head: f64,
    first_layer: f64,
    roundtrip: f64,
    layer_local: f64,
}

fn masking_instance(cfg: &ExperimentConfig, root: &RandomSource, i: usize) -> Result<MaskingOutcome> {
    let mut rng = root.split_indexed("masking", i as u64);
    let Instance { data, .. } = random_instance(cfg, &mut rng, &DIMS[..3], (8, 32), &[0.1])?;
    let (d, n) = (data.dim(), data.n());
    let k = 1 + rng.below(4);
    let model = assemble_icl_model(d, n, cfg.eta, k)?;
    let prompt = build_prompt(&data);
    let base = forward(&model, &prompt)?;
    let mut out = MaskingOutcome::default();

    let shorter = forward(&assemble_icl_model(d, n, cfg.eta, k - 1)?, &prompt)?;
    for layer in 1..=k {
        let masked = forward(&mask_head(&model, layer, 0)?, &prompt)?;
        for c in 0..n + data.q() {
            out.gd_head = out.gd_head.max(rel_dev(masked.predictions[c], shorter.predictions[c]));
        }
    }

    let rhat = reweighter_for(&data)?;
    for j in 0..d {
        let masked = forward(&mask_head(&model, 0, j)?, &prompt)?;
        let mut diag = rhat.diagonal().to_vec();
        diag[j] = 0.0;
        let zeroed = apply_preprocess(&data, &DiagonalReweighter::new(DiagonalMatrix::new(diag)?))?;
        let w = gd_solve(zeroed.examples(), cfg.eta, k, &DenseVector::zeros(d))?;
        for (c, query) in zeroed.queries().iter().enumerate() {
            let oracle = w.last().dot(&query.x)?;
            out.first_layer = out.first_layer.max(rel_dev(masked.predictions[n + c], oracle));
        }
    }

    for (layer, l) in model.layers().iter().enumerate() {
        for head in 0..l.head_count() {
            let masked = mask_head(&model, layer, head)?;
            let back = unmask_head(&masked, layer, head)?;
            let again = forward(&back, &prompt)?;
            let identical = back == model
                && again
                    .predictions
                    .as_slice()
                    .iter()
                    .zip(base.predictions.as_slice())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if !identical {
                out.roundtrip = 1.0;
            }
            let masked_trace = forward(&masked, &prompt)?;
            for upto in 0..=layer {
                let diff = masked_trace.hidden[upto].max_abs_diff(&base.hidden[upto])?;
                out.layer_local = out.layer_local.max(diff);
            }
        }
    }
    Ok(out)
}

/// Oracle equivalence, reweighting extraction, decomposition identities and
/// masking identities. Any check over tolerance makes the run fail.
pub fn run_verify(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let root = root_rng(cfg);

    let eq = par_trials(cfg.trials, |i| equivalence_instance(cfg, &root, i))?;
    let mut equivalence = Check::new("oracle_equivalence", 1e-9);
    let mut independence = Check::new("query_column_independence", 0.0);
    let mut extract = Check::new("preprocess_layer_matches_reweighting", 1e-12);
    let mut one_step = Check::new("one_step_gd_equals_scaled_squared_correlation", 1e-12);
    let mut ridge = Check::new("ridge_zero_penalty_matches_ols", 1e-8);
    let mut noiseless = Check::new("ols_noiseless_recovery", 1e-8);
    let (mut worst_abs, mut worst_pred) = (0.0_f64, 0.0_f64);
    for o in &eq {
        equivalence.record(o.rel);
        if o.abs >= worst_abs {
            worst_abs = o.abs;
            worst_pred = o.prediction_at_abs;
        }
        if let Some(v) = o.independence {
            independence.record(v);
        }
        extract.record(o.extract);
        one_step.record(o.one_step);
        if let Some(v) = o.ridge_vs_ols {
            ridge.record(v);
        }
        if let Some(v) = o.ols_noiseless {
            noiseless.record(v);
        }
    }
    let equivalence = equivalence.with_detail(format!(
        "max |y_hat - oracle| = {worst_abs:.6e} where |y_hat| = {:.6e}",
        worst_pred.abs()
    ));

    let dec = par_trials(cfg.decompose_trials, |i| decomposition_instance(cfg, &root, i))?;
    let mut three = Check::new("decomposition_three_term_identity", 1e-8);
    let mut two_exact = Check::new("decomposition_two_term_identity_noiseless_or_t0", 1e-8);
    let mut two_any: f64 = 0.0;
    let mut two_over = 0usize;
    for o in &dec {
        three.record(o.three_term);
        if let Some(v) = o.two_term_exact {
            two_exact.record(v);
        }
        two_any = two_any.max(o.two_term_any);
        if o.two_term_any > 1e-8 {
            two_over += 1;
        }
    }

    let masks = par_trials(MASKING_INSTANCES, |i| masking_instance(cfg, &root, i))?;
    let mut gd_head = Check::new("mask_gd_head_matches_shorter_model", 1e-9);
    let mut first = Check::new("mask_first_layer_head_matches_zeroed_feature", 1e-9);
    let mut roundtrip = Check::new("mask_unmask_bit_identical", 0.0);
    let mut local = Check::new("mask_leaves_earlier_layers_unchanged", 0.0);
    for o in &masks {
        gd_head.record(o.gd_head);
        first.record(o.first_layer);
        roundtrip.record(o.roundtrip);
        local.record(o.layer_local);
    }

    let checks: Vec<_> = [
        equivalence,
        independence,
        extract,
        one_step,
        ridge,
        noiseless,
        three,
        two_exact,
        gd_head,
        first,
        roundtrip,
        local,
    ]
    .iter()
    .map(Check::result)
    .collect();

    let mut out = RunOutput {
        rows: check_rows(cfg, &checks),
        checks,
        ..RunOutput::default()
    };
    out.aggregates.insert("oracle_equivalence_max_abs_deviation".into(), worst_abs);
    out.aggregates.insert("decomposition_two_term_max_relative_gap".into(), two_any);
    out.aggregates.insert("decomposition_two_term_instances_over_1e-8".into(), two_over as f64);
    Ok(out)
}
