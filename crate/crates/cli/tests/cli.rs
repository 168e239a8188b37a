use std::path::Path;
use std::process::Command;

use iclab::config::{Experiment, ExperimentConfig};
use iclab::experiments::{run, run_concentration, run_probe, run_sweep};
use iclab::output::{read_csv, write_csv, MetricValue, ResultRow, RowKey, CSV_HEADER};

fn iclab(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_iclab"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn median_of(rows: &[ResultRow], label: &str, metric: &str, n: usize) -> f64 {
    rows.iter()
        .find(|r| r.label == label && r.metric == metric && r.n == n && r.trial.is_none())
        .unwrap_or_else(|| panic!("missing {label}/{metric}/n={n}"))
        .value
        .as_f64()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = iclab(&["verify", "--override", "trials=10", "--override", "decompose_trials=20"], dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(dir.path().join("results/verify.csv").exists());
    assert!(dir.path().join("results/verify.json").exists());

    let bad = iclab(
        &["verify", "--override", "trials=10", "--override", "corrupt_output_sign=true", "--out", "c.csv"],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&bad.stdout);
    assert!(stdout.contains("FAIL oracle_equivalence"), "{stdout}");

    for args in [
        &["verify", "--override", "bogus=1"][..],
        &["verify", "--override", "s=99"][..],
        &["nonsense"][..],
        &["sweep", "--config", "missing.cfg"][..],
    ] {
        assert_eq!(iclab(args, dir.path()).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn config_file_and_seed_flag_apply() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.cfg"),
        "# small sweep\nd = 4\ns = 1\nn = 16\ntrials = 3\nlasso_max_sweeps = 50\n",
    )
    .unwrap();
    let out = iclab(&["sweep", "--config", "run.cfg", "--seed", "42", "--out", "o/s.csv"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let rows = read_csv(&dir.path().join("o/s.csv")).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.d == 4 && r.s == 1 && r.n == 16 && r.seed == 42));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o/s.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["seed"], 42);
    assert!(json.get("wall_clock_seconds").is_none());

    let timed = iclab(&["sweep", "--config", "run.cfg", "--out", "t.csv", "--timing"], dir.path());
    assert_eq!(timed.status.code(), Some(0));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("t.json")).unwrap()).unwrap();
    assert!(json["wall_clock_seconds"].is_number());
}

#[test]
fn csv_round_trip_and_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    write_csv(&[], &empty).unwrap();
    assert_eq!(std::fs::read_to_string(&empty).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
    assert!(read_csv(&empty).unwrap().is_empty());

    let key = RowKey {
        experiment: "sweep".into(),
        d: 16,
        s: 4,
        n: 64,
        q: 1,
        sigma: 0.1,
        seed: 3,
    };
    let mut rows = vec![
        key.row("ols", "excess_risk", 1.0 / 3.0, Some(2)),
        key.row("raw_gd", "excess_risk", f64::INFINITY, Some(0)),
        key.row("pre_gd", "median_excess_risk", 1.234_567_890_123_456e-7, None),
        key.row("lasso, tuned", "excess_risk", -0.0, Some(1)),
    ];
    let path = dir.path().join("rows.csv");
    write_csv(&rows, &path).unwrap();
    let back = read_csv(&path).unwrap();
    iclab::output::sort_rows(&mut rows);
    assert_eq!(back, rows);
    assert!(back.iter().any(|r| r.value == MetricValue::Diverged));

    let unwritable = dir.path().join("file.csv/inner.csv");
    std::fs::write(dir.path().join("file.csv"), "x").unwrap();
    let err = write_csv(&rows, &unwritable).unwrap_err().to_string();
    assert!(err.contains("file.csv"), "{err}");
}

#[test]
fn noiseless_ols_recovers_exactly() {
    let mut cfg = ExperimentConfig::defaults(Experiment::Sweep);
    cfg.n = vec![32, 64];
    cfg.sigma = vec![0.0];
    cfg.trials = 10;
    let out = run_sweep(&cfg).unwrap();
    let ols: Vec<f64> = out
        .rows
        .iter()
        .filter(|r| r.label == "ols" && r.metric == "excess_risk")
        .map(|r| r.value.as_f64())
        .collect();
    assert_eq!(ols.len(), 20);
    assert!(ols.iter().all(|r| *r <= 1e-8), "{ols:?}");
}

#[test]
fn preprocessed_gd_improves_with_more_data() {
    let mut cfg = ExperimentConfig::defaults(Experiment::Sweep);
    cfg.n = vec![32, 128];
    cfg.trials = 60;
    let out = run_sweep(&cfg).unwrap();
    assert!(
        median_of(&out.rows, "pre_gd", "median_excess_risk", 128)
            < median_of(&out.rows, "pre_gd", "median_excess_risk", 32)
    );
}

#[test]
fn noiseless_reweighter_gap_shrinks() {
    let mut cfg = ExperimentConfig::defaults(Experiment::Concentration);
    cfg.sigma = vec![0.0];
    cfg.n = vec![64, 512, 4096];
    cfg.trials = 40;
    let out = run_concentration(&cfg).unwrap();
    let gaps: Vec<f64> = cfg.n.iter().map(|&n| median_of(&out.rows, "rhat", "mean_gap", n)).collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    assert!(gaps[2] < 0.1);
}

#[test]
fn probe_curves_and_degenerate_query_count() {
    let cfg = ExperimentConfig::defaults(Experiment::Probe);
    let out = run_probe(&cfg).unwrap();
    assert!(out.checks.iter().all(|c| c.passed));
    let n = cfg.n[0];
    for t in &cfg.probe_steps {
        let metric = format!("median_excess_risk_t{t:05}");
        let pre = median_of(&out.rows, "pre_probe", &metric, n);
        let raw = median_of(&out.rows, "raw_probe", &metric, n);
        assert!(pre < raw, "t={t}: pre {pre} raw {raw}");
    }

    let mut small = ExperimentConfig::defaults(Experiment::Probe);
    small.q = 2;
    small.trials = 5;
    let out = run_probe(&small).unwrap();
    assert!(out
        .rows
        .iter()
        .filter(|r| r.metric.starts_with("excess_risk_t"))
        .all(|r| r.value.as_f64().is_finite()));
}

#[test]
fn heads_rows_and_flags() {
    let mut cfg = ExperimentConfig::defaults(Experiment::Heads);
    cfg.trials = 20;
    cfg.k = 2;
    let out = run(&cfg).unwrap();
    let heads: Vec<&ResultRow> = out.rows.iter().filter(|r| r.metric == "importance").collect();
    assert_eq!(heads.len(), cfg.d + cfg.k);
    let flags: Vec<&ResultRow> = out.rows.iter().filter(|r| r.metric == "flagged").collect();
    assert_eq!(flags.len(), cfg.k + 1);

    // With η = 0 the GD layers do nothing: their ΔE is zero and the rows are flagged.
    cfg.eta = 0.0;
    let out = run(&cfg).unwrap();
    for layer in 2..=cfg.k + 1 {
        let f = out
            .rows
            .iter()
            .find(|r| r.label == format!("L{layer}") && r.metric == "flagged")
            .unwrap();
        assert_eq!(f.value.as_f64(), 1.0);
    }
}

#[test]
fn decompose_rows_satisfy_three_term_identity() {
    let mut cfg = ExperimentConfig::defaults(Experiment::Decompose);
    cfg.trials = 50;
    let out = run(&cfg).unwrap();
    assert!(out.checks.iter().all(|c| c.passed), "{:?}", out.checks);
    let totals = out.rows.iter().filter(|r| r.metric == "total" && r.trial.is_some()).count();
    assert_eq!(totals, 100);
}
