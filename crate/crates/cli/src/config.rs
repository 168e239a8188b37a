//! Flat `key = value` experiment configuration.
//!
//! Every key has a default; a config file and then `--override key=value`
//! pairs are layered on top. List-valued keys take comma-separated values.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use iclab_core::task::WeightPrior;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {value:?} ({reason})")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Verify,
    Sweep,
    Heads,
    Concentration,
    Probe,
    Decompose,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Verify,
        Experiment::Sweep,
        Experiment::Heads,
        Experiment::Concentration,
        Experiment::Probe,
        Experiment::Decompose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Verify => "verify",
            Experiment::Sweep => "sweep",
            Experiment::Heads => "heads",
            Experiment::Concentration => "concentration",
            Experiment::Probe => "probe",
            Experiment::Decompose => "decompose",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| ConfigError::BadValue {
                key: "experiment".into(),
                value: s.into(),
                reason: "expected one of verify, sweep, heads, concentration, probe, decompose"
                    .into(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub d: usize,
    pub s: usize,
    pub n: Vec<usize>,
    pub q: usize,
    /// GD layers after the preprocessing layer.
    pub k: usize,
    pub sigma: Vec<f64>,
    /// Step size baked into constructed models and fixed-step runs.
    pub eta: f64,
    pub eta_grid: Vec<f64>,
    pub ridge_grid: Vec<f64>,
    pub lasso_grid: Vec<f64>,
    /// GD steps for tuned estimators.
    pub steps: usize,
    pub probe_steps: Vec<usize>,
    pub trials: usize,
    /// Instances for the decomposition identities inside `verify`.
    pub decompose_trials: usize,
    pub seed: u64,
    pub delta: f64,
    #[serde(serialize_with = "serialize_prior")]
    pub prior: WeightPrior,
    /// Diagonal of Σ; empty means identity.
    pub covariance: Vec<f64>,
    pub lasso_max_sweeps: usize,
    pub lasso_tol: f64,
    /// Debug switch: negate the model readout so equivalence checks must fail.
    pub corrupt_output_sign: bool,
    pub output_path: PathBuf,
}

fn serialize_prior<S: serde::Serializer>(p: &WeightPrior, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(prior_name(*p))
}

fn prior_name(p: WeightPrior) -> &'static str {
    match p {
        WeightPrior::GaussianThenSparsify => "gaussian",
        WeightPrior::RademacherOverSqrtS => "rademacher",
    }
}

const STEP_SIZE_GRID: [f64; 7] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
const PENALTY_GRID: [f64; 5] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4];

impl ExperimentConfig {
    /// Defaults for `experiment`.
    pub fn defaults(experiment: Experiment) -> Self {
        let mut cfg = ExperimentConfig {
            experiment,
            d: 16,
            s: 4,
            n: vec![128],
            q: 1,
            k: 4,
            sigma: vec![0.1],
            eta: 0.1,
            eta_grid: STEP_SIZE_GRID.to_vec(),
            ridge_grid: PENALTY_GRID.to_vec(),
            lasso_grid: PENALTY_GRID.to_vec(),
            steps: 64,
            probe_steps: vec![1, 2, 4, 8, 16, 32, 64],
            trials: 200,
            decompose_trials: 500,
            seed: 0,
            delta: 0.05,
            prior: WeightPrior::RademacherOverSqrtS,
            covariance: Vec::new(),
            lasso_max_sweeps: 2000,
            lasso_tol: 1e-9,
            corrupt_output_sign: false,
            output_path: PathBuf::from(format!("results/{}.csv", experiment.name())),
        };
        match experiment {
            Experiment::Verify => {
                cfg.trials = 120;
                cfg.q = 3;
            }
            Experiment::Sweep => {
                cfg.n = vec![64, 128];
            }
            Experiment::Heads => {
                cfg.q = 4;
                cfg.eta = 0.5;
            }
            Experiment::Concentration => {
                cfg.n = (6..=13).map(|p| 1usize << p).collect();
            }
            Experiment::Probe => {
                cfg.n = vec![117];
                cfg.q = 11;
                cfg.k = 0;
                cfg.trials = 100;
            }
            Experiment::Decompose => {
                cfg.d = 8;
                cfg.s = 2;
                cfg.n = vec![32];
                cfg.sigma = vec![0.2];
                cfg.steps = 16;
                // 0.5 lets a few large-r̂ instances grow without overflowing
                cfg.eta = 0.3;
                cfg.trials = 500;
            }
        }
        cfg
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |reason: &str| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        };
        fn scalar<T: FromStr>(v: &str) -> Option<T> {
            v.trim().parse().ok()
        }
        fn list<T: FromStr>(v: &str) -> Option<Vec<T>> {
            v.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse().ok())
                .collect()
        }
        match key {
            "experiment" => self.experiment = value.trim().parse()?,
            "d" => self.d = scalar(value).ok_or_else(|| bad("integer"))?,
            "s" => self.s = scalar(value).ok_or_else(|| bad("integer"))?,
            "n" => self.n = list(value).ok_or_else(|| bad("comma-separated integers"))?,
            "q" => self.q = scalar(value).ok_or_else(|| bad("integer"))?,
            "k" => self.k = scalar(value).ok_or_else(|| bad("integer"))?,
            "sigma" => self.sigma = list(value).ok_or_else(|| bad("comma-separated reals"))?,
            "eta" => self.eta = scalar(value).ok_or_else(|| bad("real"))?,
            "eta_grid" => self.eta_grid = list(value).ok_or_else(|| bad("comma-separated reals"))?,
            "ridge_grid" => {
                self.ridge_grid = list(value).ok_or_else(|| bad("comma-separated reals"))?
            }
            "lasso_grid" => {
                self.lasso_grid = list(value).ok_or_else(|| bad("comma-separated reals"))?
            }
            "steps" => self.steps = scalar(value).ok_or_else(|| bad("integer"))?,
            "probe_steps" => {
                self.probe_steps = list(value).ok_or_else(|| bad("comma-separated integers"))?
            }
            "trials" => self.trials = scalar(value).ok_or_else(|| bad("integer"))?,
            "decompose_trials" => {
                self.decompose_trials = scalar(value).ok_or_else(|| bad("integer"))?
            }
            "seed" => self.seed = scalar(value).ok_or_else(|| bad("unsigned 64-bit integer"))?,
            "delta" => self.delta = scalar(value).ok_or_else(|| bad("real"))?,
            "prior" => {
                self.prior = match value.trim() {
                    "gaussian" => WeightPrior::GaussianThenSparsify,
                    "rademacher" => WeightPrior::RademacherOverSqrtS,
                    _ => return Err(bad("expected gaussian or rademacher")),
                }
            }
            "covariance" => {
                self.covariance = list(value).ok_or_else(|| bad("comma-separated reals"))?
            }
            "lasso_max_sweeps" => {
                self.lasso_max_sweeps = scalar(value).ok_or_else(|| bad("integer"))?
            }
            "lasso_tol" => self.lasso_tol = scalar(value).ok_or_else(|| bad("real"))?,
            "corrupt_output_sign" => {
                self.corrupt_output_sign = scalar(value).ok_or_else(|| bad("true or false"))?
            }
            "output" | "output_path" => self.output_path = PathBuf::from(value.trim()),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies `key = value` lines. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_text(&text)
    }

    /// Applies a single `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (key, value) = pair.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: pair.to_string(),
        })?;
        self.set(key.trim(), value.trim())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        if self.d == 0 || self.s == 0 || self.s > self.d {
            return fail(format!("need 1 <= s <= d, got s={}, d={}", self.s, self.d));
        }
        if self.n.is_empty() || self.n.contains(&0) {
            return fail("n must list counts >= 1".into());
        }
        if self.q == 0 || self.trials == 0 {
            return fail("q and trials must be >= 1".into());
        }
        if self.sigma.is_empty() || self.sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return fail("sigma must list finite values >= 0".into());
        }
        for (name, grid) in [
            ("eta_grid", &self.eta_grid),
            ("ridge_grid", &self.ridge_grid),
            ("lasso_grid", &self.lasso_grid),
        ] {
            if grid.is_empty() || grid.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return fail(format!("{name} must be a nonempty list of positive reals"));
            }
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return fail("eta must be >= 0".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail("delta must lie in (0, 1)".into());
        }
        if !self.covariance.is_empty()
            && (self.covariance.len() != self.d || self.covariance.iter().any(|v| !(*v >= 0.0)))
        {
            return fail("covariance must list d nonnegative values".into());
        }
        match self.experiment {
            Experiment::Probe if self.q < 2 => fail("probe needs q >= 2".into()),
            Experiment::Probe if self.probe_steps.is_empty() => {
                fail("probe needs probe_steps".into())
            }
            Experiment::Concentration => {
                let lo = *self.n.iter().min().expect("nonempty") as f64;
                let hi = *self.n.iter().max().expect("nonempty") as f64;
                if hi / lo < 8.0 {
                    fail("concentration needs n spanning at least 3 octaves".into())
                } else {
                    Ok(())
                }
            }
            Experiment::Verify if self.eta == 0.0 => fail("verify needs eta > 0".into()),
            _ => Ok(()),
        }
    }

    pub fn prior_name(&self) -> &'static str {
        prior_name(self.prior)
    }
}
