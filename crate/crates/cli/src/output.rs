//! Result rows, CSV I/O and the JSON run summary.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::ExperimentConfig;

pub const CSV_HEADER: [&str; 11] = [
    "experiment",
    "d",
    "s",
    "n",
    "q",
    "sigma",
    "estimator_or_layer_head",
    "metric",
    "value",
    "seed",
    "trial",
];

const DIVERGED: &str = "diverged";

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: record {record}: {reason}")]
    Parse {
        path: PathBuf,
        record: usize,
        reason: String,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

/// Formats with 12 significant digits.
pub fn format_decimal(v: f64) -> String {
    format!("{v:.11e}")
}

/// Rounds to what [`format_decimal`] prints, so rows survive a CSV round trip.
pub fn quantize(v: f64) -> f64 {
    if v.is_finite() {
        format_decimal(v).parse().expect("formatted float parses")
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricValue {
    Finite(f64),
    Diverged,
}

impl MetricValue {
    pub fn from_f64(v: f64) -> Self {
        if v.is_finite() {
            MetricValue::Finite(quantize(v))
        } else {
            MetricValue::Diverged
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            MetricValue::Finite(v) => v,
            MetricValue::Diverged => f64::INFINITY,
        }
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Finite(v) => f.write_str(&format_decimal(*v)),
            MetricValue::Diverged => f.write_str(DIVERGED),
        }
    }
}

/// One metric value. `trial` is `None` for aggregates over trials; `n` is 0
/// for aggregates across several n.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub d: usize,
    pub s: usize,
    pub n: usize,
    pub q: usize,
    pub sigma: f64,
    pub label: String,
    pub metric: String,
    pub value: MetricValue,
    pub seed: u64,
    pub trial: Option<usize>,
}

/// Shared columns for the rows of one experiment cell.
#[derive(Debug, Clone)]
pub struct RowKey {
    pub experiment: String,
    pub d: usize,
    pub s: usize,
    pub n: usize,
    pub q: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl RowKey {
    pub fn row(&self, label: &str, metric: &str, value: f64, trial: Option<usize>) -> ResultRow {
        ResultRow {
            experiment: self.experiment.clone(),
            d: self.d,
            s: self.s,
            n: self.n,
            q: self.q,
            sigma: quantize(self.sigma),
            label: label.to_string(),
            metric: metric.to_string(),
            value: MetricValue::from_f64(value),
            seed: self.seed,
            trial,
        }
    }
}

impl ResultRow {
    fn sort_cmp(&self, other: &Self) -> Ordering {
        self.experiment
            .cmp(&other.experiment)
            .then(self.d.cmp(&other.d))
            .then(self.s.cmp(&other.s))
            .then(self.n.cmp(&other.n))
            .then(self.q.cmp(&other.q))
            .then(self.sigma.total_cmp(&other.sigma))
            .then(self.label.cmp(&other.label))
            .then(self.metric.cmp(&other.metric))
            .then(self.trial.cmp(&other.trial))
            .then(self.seed.cmp(&other.seed))
    }

    fn record(&self) -> [String; 11] {
        [
            self.experiment.clone(),
            self.d.to_string(),
            self.s.to_string(),
            self.n.to_string(),
            self.q.to_string(),
            format_decimal(self.sigma),
            self.label.clone(),
            self.metric.clone(),
            self.value.to_string(),
            self.seed.to_string(),
            self.trial.map(|t| t.to_string()).unwrap_or_default(),
        ]
    }
}

/// Sorts by swept keys, then label, metric and trial.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| a.sort_cmp(b));
}

fn ensure_parent(path: &Path) -> Result<(), OutputError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|source| OutputError::Io {
            path: path.to_path_buf(),
            source,
        }),
        _ => Ok(()),
    }
}

/// Writes the header and the rows in sorted order.
pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<(), OutputError> {
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    ensure_parent(path)?;
    let csv_err = |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in &sorted {
        w.write_record(row.record()).map_err(csv_err)?;
    }
    w.flush().map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>, OutputError> {
    let csv_err = |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(OutputError::Parse {
            path: path.to_path_buf(),
            record: 0,
            reason: format!("unexpected header {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |field: &str| OutputError::Parse {
            path: path.to_path_buf(),
            record: i + 1,
            reason: format!("bad {field}"),
        };
        let int = |k: usize, name: &str| rec[k].parse::<usize>().map_err(|_| bad(name));
        let value = match &rec[8] {
            DIVERGED => MetricValue::Diverged,
            v => MetricValue::Finite(v.parse().map_err(|_| bad("value"))?),
        };
        rows.push(ResultRow {
            experiment: rec[0].to_string(),
            d: int(1, "d")?,
            s: int(2, "s")?,
            n: int(3, "n")?,
            q: int(4, "q")?,
            sigma: rec[5].parse().map_err(|_| bad("sigma"))?,
            label: rec[6].to_string(),
            metric: rec[7].to_string(),
            value,
            seed: rec[9].parse().map_err(|_| bad("seed"))?,
            trial: match &rec[10] {
                "" => None,
                t => Some(t.parse().map_err(|_| bad("trial"))?),
            },
        });
    }
    Ok(rows)
}

/// Outcome of one verification check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub instances: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub rows: usize,
    pub passed: usize,
    pub failed: usize,
    pub checks: Vec<CheckResult>,
    pub aggregates: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl RunSummary {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

/// Pretty JSON with a trailing newline. Non-finite aggregates become `null`.
pub fn write_json(summary: &RunSummary, path: &Path) -> Result<(), OutputError> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(summary).map_err(|source| OutputError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    let mut f = fs::File::create(path).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(text.as_bytes()).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `results/sweep.csv` → `results/sweep.json`.
pub fn json_path_for(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}
