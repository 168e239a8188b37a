//! Acceptance gate. Each test prints one PASS/FAIL line to stderr (bypassing
//! the test harness capture) and then asserts.

use std::io::Write;
use std::time::{Duration, Instant};

use iclab::config::{Experiment, ExperimentConfig};
use iclab::experiments::{run_concentration, run_heads, run_sweep, run_verify, RunOutput};
use iclab::output::{CheckResult, ResultRow};
use iclab_core::estimators::{decompose_pre_gd, decompose_raw_gd, ols_solve};
use iclab_core::linalg::{DenseVector, DiagonalMatrix};
use iclab_core::preprocess::{apply_preprocess, reweighter_for};
use iclab_core::rng::RandomSource;
use iclab_core::task::{
    excess_risk_raw, sample_dataset, sample_task, InContextDataset, SparseLinearTask, WeightPrior,
};

fn report(criterion: u32, name: &str, passed: bool, elapsed: Duration, detail: &str) {
    let line = format!(
        "acceptance {criterion}: {} {name} ({:.2}s) {detail}\n",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
}

fn check<'a>(out: &'a RunOutput, name: &str) -> &'a CheckResult {
    out.checks
        .iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("missing check {name}"))
}

fn value(rows: &[ResultRow], label: &str, metric: &str, n: usize) -> f64 {
    rows.iter()
        .find(|r| r.label == label && r.metric == metric && r.n == n && r.trial.is_none())
        .unwrap_or_else(|| panic!("missing row {label}/{metric}/n={n}"))
        .value
        .as_f64()
}

fn describe(c: &CheckResult) -> String {
    format!(
        "{} over {} instances: max deviation {:.3e} (tolerance {:.0e})",
        c.name, c.instances, c.max_deviation, c.tolerance
    )
}

#[test]
fn criterion_1_construction_matches_gd_oracle() {
    let start = Instant::now();
    let cfg = ExperimentConfig::defaults(Experiment::Verify);
    assert_eq!(cfg.eta, 0.1);
    let out = run_verify(&cfg).unwrap();
    let c = check(&out, "oracle_equivalence");
    let elapsed = start.elapsed();
    let passed = c.passed && c.instances >= 100 && elapsed < Duration::from_secs(30);
    report(1, "construction/oracle equivalence", passed, elapsed, &describe(c));
    assert!(passed, "{c:?}");
}

struct DecompositionCase {
    data: InContextDataset,
    noise: DenseVector,
    task: SparseLinearTask,
    t: usize,
    eta_pre: f64,
    eta_raw: f64,
}

/// Random instance with step sizes `c / trace(Σ̂)`, `c ∈ (0.1, 1.5)`, which
/// keeps GD stable on both the raw and the reweighted design.
fn decomposition_case(root: &RandomSource, i: u64) -> DecompositionCase {
    let mut rng = root.split_indexed("instance", i);
    let d = [2, 4, 8, 16][rng.below(4)];
    let s = 1 + rng.below((d / 2).max(1));
    let n = 8 + rng.below(57);
    let sigma = [0.0, 0.1, 0.5][rng.below(3)];
    let task = sample_task(d, s, &DiagonalMatrix::identity(d), sigma, WeightPrior::RademacherOverSqrtS, &mut rng).unwrap();
    let (data, noise) = sample_dataset(&task, n, 1, &mut rng).unwrap();
    let t = rng.below(17);
    let trace = |data: &InContextDataset| {
        data.examples().iter().map(|e| e.x.norm().powi(2)).sum::<f64>() / data.n() as f64
    };
    let pre = apply_preprocess(&data, &reweighter_for(&data).unwrap()).unwrap();
    let eta_pre = rng.uniform_range(0.1, 1.5) / trace(&pre);
    let eta_raw = rng.uniform_range(0.1, 1.5) / trace(&data);
    DecompositionCase { data, noise, task, t, eta_pre, eta_raw }
}

#[test]
fn criterion_2_bias_plus_variance_equals_risk() {
    let start = Instant::now();
    let root = RandomSource::new(2);
    let (mut worst_two, mut worst_three, mut worst_cross) = (0.0_f64, 0.0_f64, 0.0_f64);
    let (mut over, mut over_with_noise) = (0, 0);
    for i in 0..500 {
        let DecompositionCase { data, noise, task, t, eta_pre, eta_raw } = decomposition_case(&root, i);
        let decs = [
            decompose_pre_gd(&data, &noise, &task, eta_pre, t).unwrap(),
            decompose_raw_gd(&data, &noise, &task, eta_raw, t).unwrap(),
        ];
        for dec in &decs {
            let scale = 1.0 + dec.total;
            let two = dec.two_term_gap() / scale;
            worst_two = worst_two.max(two);
            worst_three = worst_three.max(dec.three_term_gap() / scale);
            worst_cross = worst_cross.max(dec.cross.abs() / scale);
            if two > 1e-8 {
                over += 1;
                if task.noise_std() > 0.0 && t > 0 {
                    over_with_noise += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let passed = worst_two <= 1e-8 && elapsed < Duration::from_secs(10);
    let detail = format!(
        "bias+variance vs risk: {over}/1000 fits exceed 1e-8*(1+risk) ({over_with_noise} of them with sigma>0, t>0), \
         max gap {worst_two:.3e}; max |cross term| {worst_cross:.3e}; bias+variance+cross vs risk max gap {worst_three:.3e}"
    );
    report(2, "bias/variance identity (two-term, as stated)", passed, elapsed, &detail);
    // The cross term −2⟨b, v⟩ is what the two-term identity omits; the
    // three-term identity must hold regardless.
    assert!(worst_three <= 1e-8, "three-term identity broken: {worst_three:e}");
    assert!(passed, "{detail}");
}

#[test]
fn criterion_3_masking_identities() {
    let start = Instant::now();
    let out = run_verify(&ExperimentConfig::defaults(Experiment::Verify)).unwrap();
    let names = [
        "mask_gd_head_matches_shorter_model",
        "mask_first_layer_head_matches_zeroed_feature",
        "mask_unmask_bit_identical",
    ];
    let elapsed = start.elapsed();
    let passed = names.iter().all(|n| check(&out, n).passed) && elapsed < Duration::from_secs(10);
    let detail = names.iter().map(|n| describe(check(&out, n))).collect::<Vec<_>>().join("; ");
    report(3, "masking identities", passed, elapsed, &detail);
    assert!(passed, "{detail}");
}

#[test]
fn criterion_4_reweighter_concentration_rate() {
    let start = Instant::now();
    let cfg = ExperimentConfig::defaults(Experiment::Concentration);
    assert_eq!(cfg.n, vec![64, 128, 256, 512, 1024, 2048, 4096, 8192]);
    assert_eq!((cfg.trials, cfg.d, cfg.s, cfg.sigma.clone()), (200, 16, 4, vec![0.1]));
    let out = run_concentration(&cfg).unwrap();
    let slope = value(&out.rows, "rhat", "slope_log_mean_gap", 0);
    let elapsed = start.elapsed();
    let passed = (-0.6..=-0.4).contains(&slope) && elapsed < Duration::from_secs(60);
    report(4, "reweighter error rate", passed, elapsed, &format!("log-log slope {slope:.4}"));
    assert!(passed, "slope {slope}");
}

#[test]
fn criterion_5_preprocessed_gd_beats_baselines() {
    let start = Instant::now();
    let cfg = ExperimentConfig::defaults(Experiment::Sweep);
    assert_eq!((cfg.d, cfg.s, cfg.steps, cfg.trials), (16, 4, 64, 200));
    assert_eq!((cfg.n.clone(), cfg.sigma.clone()), (vec![64, 128], vec![0.1]));
    let out = run_sweep(&cfg).unwrap();
    let mut passed = true;
    let mut detail = Vec::new();
    for n in [64, 128] {
        let m = |e: &str| value(&out.rows, e, "median_excess_risk", n);
        let pre = m("pre_gd");
        let ok = pre < m("raw_gd") && pre < m("ridge") && pre < m("ols");
        passed &= ok;
        detail.push(format!(
            "n={n}: pre_gd {pre:.3e}, raw_gd {:.3e}, ridge {:.3e}, ols {:.3e}, lasso {:.3e}",
            m("raw_gd"),
            m("ridge"),
            m("ols"),
            m("lasso")
        ));
    }
    let elapsed = start.elapsed();
    passed &= elapsed < Duration::from_secs(300);
    let detail = detail.join("; ");
    report(5, "median risk ordering", passed, elapsed, &detail);
    assert!(passed, "{detail}");
}

#[test]
fn criterion_6_ols_risk_matches_isotropic_expectation() {
    let start = Instant::now();
    let (d, n, sigma) = (16usize, 128usize, 1.0);
    let root = RandomSource::new(6);
    let cov = DiagonalMatrix::identity(d);
    let risks: Vec<f64> = (0..2000)
        .map(|seed| {
            let mut rng = root.split_indexed("seed", seed);
            let task = sample_task(d, 4, &cov, sigma, WeightPrior::RademacherOverSqrtS, &mut rng).unwrap();
            let (data, _) = sample_dataset(&task, n, 1, &mut rng).unwrap();
            excess_risk_raw(&ols_solve(data.examples()).unwrap().weights, &task).unwrap()
        })
        .collect();
    let mean = risks.iter().sum::<f64>() / risks.len() as f64;
    // E[tr((XᵀX)⁻¹)] for Gaussian X is d/(n−d−1).
    let expected = sigma * sigma * d as f64 / (n - d - 1) as f64;
    let rel = (mean - expected).abs() / expected;
    let elapsed = start.elapsed();
    let passed = rel <= 0.2 && elapsed < Duration::from_secs(60);
    report(
        6,
        "OLS risk calibration",
        passed,
        elapsed,
        &format!("mean {mean:.5}, expected {expected:.5}, relative gap {rel:.4}"),
    );
    assert!(passed);
}

#[test]
fn criterion_7_head_importance_structure() {
    let start = Instant::now();
    let cfg = ExperimentConfig::defaults(Experiment::Heads);
    assert_eq!((cfg.d, cfg.s, cfg.trials), (16, 4, 200));
    let out = run_heads(&cfg).unwrap();
    let n = cfg.n[0];
    let mass = value(&out.rows, "L1", "support_mass", n);
    let mut gd_rows_ok = true;
    let mut worst_sum: f64 = 0.0;
    for layer in 1..=cfg.k + 1 {
        let flagged = value(&out.rows, &format!("L{layer}"), "flagged", n) != 0.0;
        if !flagged {
            worst_sum = worst_sum.max((value(&out.rows, &format!("L{layer}"), "row_sum", n) - 1.0).abs());
        }
        if layer > 1 {
            gd_rows_ok &= !flagged && value(&out.rows, &format!("L{layer}H1"), "importance", n) == 1.0;
        }
    }
    let elapsed = start.elapsed();
    let passed = mass >= 0.9 && gd_rows_ok && worst_sum <= 1e-12 && elapsed < Duration::from_secs(60);
    let detail = format!("support mass {mass:.4}, GD rows exactly 1: {gd_rows_ok}, max |row sum - 1| {worst_sum:.2e}");
    report(7, "head importance structure", passed, elapsed, &detail);
    assert!(passed, "{detail}");
}

#[test]
fn criterion_8_runs_are_byte_identical() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut mismatches = Vec::new();
    for e in Experiment::ALL {
        let mut bytes = Vec::new();
        for _ in 0..2 {
            let mut cfg = ExperimentConfig::defaults(e);
            cfg.seed = 8;
            cfg.output_path = dir.path().join(format!("{e}.csv"));
            let art = iclab::execute(&cfg, false).unwrap();
            bytes.push((std::fs::read(&art.csv).unwrap(), std::fs::read(&art.json).unwrap()));
        }
        if bytes[0] != bytes[1] {
            mismatches.push(e.name());
        }
    }
    let elapsed = start.elapsed();
    let passed = mismatches.is_empty();
    report(8, "determinism", passed, elapsed, &format!("6 experiments, mismatches: {mismatches:?}"));
    assert!(passed);
}
