//! Regression procedures compared in the experiments: gradient descent on raw
//! and reweighted features, ridge, min-norm OLS and Lasso, plus the exact
//! bias/variance split of the GD excess risk and the theory-driven step-size
//! schedule.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::linalg::{
    cholesky_solve, diag_apply, dot, empirical_second_moment, pinv_solve, DenseMatrix,
    DenseVector,
};
use crate::preprocess::{apply_preprocess, population_reweighter, reweighter_for, DiagonalReweighter};
use crate::task::{design, excess_risk_pre, excess_risk_raw, Example, InContextDataset, SparseLinearTask};

/// Gradient-descent iterates `w⁰ … wᵗ` on the loss `(1/2n) Σ (y_i − ⟨w, x_i⟩)²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdTrajectory {
    iterates: Vec<DenseVector>,
    step_size: f64,
    reweighter: Option<DiagonalReweighter>,
}

impl GdTrajectory {
    pub fn iterates(&self) -> &[DenseVector] {
        &self.iterates
    }

    pub fn steps(&self) -> usize {
        self.iterates.len() - 1
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn last(&self) -> &DenseVector {
        self.iterates.last().expect("trajectory holds w0")
    }

    pub fn is_preprocessed(&self) -> bool {
        self.reweighter.is_some()
    }

    pub fn reweighter(&self) -> Option<&DiagonalReweighter> {
        self.reweighter.as_ref()
    }

    /// Closed-form excess risk of every iterate (through R̂ when preprocessed).
    pub fn risks(&self, task: &SparseLinearTask) -> Result<Vec<f64>> {
        self.iterates
            .iter()
            .map(|w| match &self.reweighter {
                Some(r) => excess_risk_pre(w, r, task),
                None => excess_risk_raw(w, task),
            })
            .collect()
    }
}

pub fn gd_solve(examples: &[Example], eta: f64, t: usize, w0: &DenseVector) -> Result<GdTrajectory> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(contract(format!("step size must be positive, got {eta}")));
    }
    let (x, y) = design(examples)?;
    let (n, d) = (x.rows(), x.cols());
    if w0.dim() != d {
        return Err(Error::DimensionMismatch {
            op: "gd_solve",
            left: d,
            right: w0.dim(),
        });
    }
    let scale = eta / n as f64;
    let mut iterates = Vec::with_capacity(t + 1);
    let mut w = w0.as_slice().to_vec();
    iterates.push(w0.clone());
    let mut grad = vec![0.0; d];
    for step in 1..=t {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let row = x.row(i);
            let residual = dot(row, &w) - y[i];
            for (g, xij) in grad.iter_mut().zip(row) {
                *g += xij * residual;
            }
        }
        for (wj, g) in w.iter_mut().zip(&grad) {
            *wj -= scale * g;
        }
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { step });
        }
        iterates.push(DenseVector::from_vec_unchecked(w.clone()));
    }
    Ok(GdTrajectory {
        iterates,
        step_size: eta,
        reweighter: None,
    })
}

/// Estimates R̂ from the examples, reweights, then runs GD from zero.
pub fn pre_gd_solve(data: &InContextDataset, eta: f64, t: usize) -> Result<GdTrajectory> {
    let reweighter = reweighter_for(data)?;
    let reweighted = apply_preprocess(data, &reweighter)?;
    let mut traj = gd_solve(reweighted.examples(), eta, t, &DenseVector::zeros(data.dim()))?;
    traj.reweighter = Some(reweighter);
    Ok(traj)
}

fn normal_equations(examples: &[Example]) -> Result<(DenseMatrix, DenseMatrix, Vec<f64>, Vec<f64>)> {
    let (x, y) = design(examples)?;
    let n = x.rows() as f64;
    let gram = empirical_second_moment(&x)?;
    let rhs: Vec<f64> = (0..x.cols())
        .map(|j| (0..x.rows()).map(|i| x.get(i, j) * y[i]).sum::<f64>() / n)
        .collect();
    Ok((x, gram, rhs, y))
}

/// `(Σ̂ + λI)⁻¹ (1/n) Xᵀy`.
pub fn ridge_solve(examples: &[Example], lambda: f64) -> Result<DenseVector> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(contract(format!("ridge penalty must be >= 0, got {lambda}")));
    }
    let (_, mut a, rhs, _) = normal_equations(examples)?;
    let d = a.rows();
    for j in 0..d {
        let v = a.get(j, j) + lambda;
        a.set(j, j, v);
    }
    cholesky_solve(&a, &rhs)
        .map(DenseVector::from_vec_unchecked)
        .ok_or(Error::Singular("ridge_solve"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub weights: DenseVector,
    /// Set when the Gram matrix was rank deficient and the SVD pseudo-inverse
    /// was used instead.
    pub used_pseudo_inverse: bool,
}

/// Least squares; the minimum-norm interpolant when `d > n`.
pub fn ols_solve(examples: &[Example]) -> Result<OlsFit> {
    let (x, gram, rhs, y) = normal_equations(examples)?;
    let (n, d) = (x.rows(), x.cols());
    let direct = if n >= d {
        cholesky_solve(&gram, &rhs)
    } else {
        // w = Xᵀ (XXᵀ)⁻¹ y
        let xxt = x.matmul(&x.transpose())?;
        cholesky_solve(&xxt, &y).map(|a| {
            (0..d)
                .map(|j| (0..n).map(|i| x.get(i, j) * a[i]).sum())
                .collect()
        })
    };
    Ok(match direct {
        Some(w) => OlsFit {
            weights: DenseVector::from_vec_unchecked(w),
            used_pseudo_inverse: false,
        },
        None => OlsFit {
            weights: DenseVector::from_vec_unchecked(pinv_solve(&x, &y)),
            used_pseudo_inverse: true,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub weights: DenseVector,
    pub converged: bool,
    pub sweeps: usize,
    /// Objective after each completed sweep, starting with the value at zero.
    pub objective: Vec<f64>,
}

fn soft_threshold(v: f64, alpha: f64) -> f64 {
    if v > alpha {
        v - alpha
    } else if v < -alpha {
        v + alpha
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on `(1/2n)‖y − Xw‖² + α‖w‖₁`, starting at zero.
pub fn lasso_cd(examples: &[Example], alpha: f64, max_sweeps: usize, tol: f64) -> Result<LassoFit> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(contract(format!("lasso penalty must be positive, got {alpha}")));
    }
    let (x, y) = design(examples)?;
    let (n, d) = (x.rows(), x.cols());
    let inv_n = 1.0 / n as f64;
    let col_sq: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| x.get(i, j).powi(2)).sum::<f64>() * inv_n)
        .collect();
    let mut w = vec![0.0; d];
    let mut residual = y.clone();
    let objective = |residual: &[f64], w: &[f64]| {
        0.5 * inv_n * residual.iter().map(|r| r * r).sum::<f64>()
            + alpha * w.iter().map(|v| v.abs()).sum::<f64>()
    };
    let mut history = vec![objective(&residual, &w)];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..d {
            if col_sq[j] == 0.0 {
                continue;
            }
            let rho = (0..n).map(|i| x.get(i, j) * residual[i]).sum::<f64>() * inv_n
                + col_sq[j] * w[j];
            let new = soft_threshold(rho, alpha) / col_sq[j];
            let delta = new - w[j];
            if delta != 0.0 {
                for i in 0..n {
                    residual[i] -= x.get(i, j) * delta;
                }
                w[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        history.push(objective(&residual, &w));
        if max_change < tol {
            converged = true;
            break;
        }
    }
    Ok(LassoFit {
        weights: DenseVector::new(w)?,
        converged,
        sweeps,
        objective: history,
    })
}

/// Exact split of a GD iterate's excess risk.
///
/// With `δ = ŵ_t − R̄w*` the risk is `‖Σ^{1/2}R̂δ‖²` and
/// `Σ^{1/2}R̂δ = −b + v`, where `b` is the bias vector (contraction of the
/// target) and `v` the noise-driven vector. `bias = ‖b‖²`, `variance = ‖v‖²`
/// and `cross = −2⟨b, v⟩`, so `bias + variance + cross == total`. The cross
/// term has zero mean over the label noise but is nonzero for any single draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskDecomposition {
    pub bias: f64,
    pub variance: f64,
    pub cross: f64,
    pub total: f64,
    /// Present when some |r̂_j| on the support is below 1e-12 and the
    /// pseudo-inverse R̄ cannot undo the reweighting there.
    pub diagnostic: Option<String>,
}

impl RiskDecomposition {
    pub fn three_term_gap(&self) -> f64 {
        (self.bias + self.variance + self.cross - self.total).abs()
    }

    pub fn two_term_gap(&self) -> f64 {
        (self.bias + self.variance - self.total).abs()
    }
}

const SUPPORT_FLOOR: f64 = 1e-12;

#[allow(clippy::too_many_arguments)]
fn split_risk(
    x_tilde: &DenseMatrix,
    rhat: &[f64],
    target: &[f64],
    task: &SparseLinearTask,
    noise: &DenseVector,
    eta: f64,
    t: usize,
    total: f64,
    diagnostic: Option<String>,
) -> Result<RiskDecomposition> {
    let (n, d) = (x_tilde.rows(), x_tilde.cols());
    if noise.dim() != n {
        return Err(Error::DimensionMismatch {
            op: "decompose",
            left: n,
            right: noise.dim(),
        });
    }
    let sigma_hat = empirical_second_moment(x_tilde)?;
    let contract_step = |v: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|i| v[i] - eta * dot(sigma_hat.row(i), v))
            .collect()
    };

    let mut bias_dir = target.to_vec();
    for _ in 0..t {
        bias_dir = contract_step(&bias_dir);
    }

    let eps = noise.as_slice();
    let g: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| x_tilde.get(i, j) * eps[i]).sum::<f64>() / n as f64)
        .collect();
    let mut acc = vec![0.0; d];
    let mut power = g;
    for _ in 0..t {
        acc.iter_mut().zip(&power).for_each(|(a, p)| *a += p);
        power = contract_step(&power);
    }

    let cov = task.covariance().diagonal();
    let b: Vec<f64> = (0..d).map(|j| cov[j].sqrt() * rhat[j] * bias_dir[j]).collect();
    let v: Vec<f64> = (0..d).map(|j| eta * cov[j].sqrt() * rhat[j] * acc[j]).collect();
    Ok(RiskDecomposition {
        bias: dot(&b, &b),
        variance: dot(&v, &v),
        cross: -2.0 * dot(&b, &v),
        total,
        diagnostic,
    })
}

fn check_noise(data: &InContextDataset, noise: &DenseVector, task: &SparseLinearTask) -> Result<()> {
    if noise.dim() != data.n() {
        return Err(Error::DimensionMismatch {
            op: "decompose",
            left: data.n(),
            right: noise.dim(),
        });
    }
    if task.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            op: "decompose",
            left: task.dim(),
            right: data.dim(),
        });
    }
    Ok(())
}

/// Bias/variance split of the excess risk of t-step GD on reweighted features.
pub fn decompose_pre_gd(
    data: &InContextDataset,
    noise: &DenseVector,
    task: &SparseLinearTask,
    eta: f64,
    t: usize,
) -> Result<RiskDecomposition> {
    check_noise(data, noise, task)?;
    let traj = pre_gd_solve(data, eta, t)?;
    let rhat = traj.reweighter().expect("preprocessed trajectory").clone();
    let total = excess_risk_pre(traj.last(), &rhat, task)?;
    let reweighted = apply_preprocess(data, &rhat)?;
    let (x_tilde, _) = design(reweighted.examples())?;

    let r = rhat.diagonal();
    let w_star = task.weights().as_slice();
    let mut target = vec![0.0; task.dim()];
    let mut weak = Vec::new();
    for &j in task.support() {
        if r[j].abs() < SUPPORT_FLOOR {
            weak.push(j);
        } else {
            target[j] = w_star[j] / r[j];
        }
    }
    let diagnostic = (!weak.is_empty()).then(|| {
        format!("|r̂_j| < {SUPPORT_FLOOR:e} on support coordinates {weak:?}; identity degrades")
    });
    split_risk(&x_tilde, r, &target, task, noise, eta, t, total, diagnostic)
}

/// Bias/variance split of the excess risk of t-step GD from zero on raw features.
pub fn decompose_raw_gd(
    data: &InContextDataset,
    noise: &DenseVector,
    task: &SparseLinearTask,
    eta: f64,
    t: usize,
) -> Result<RiskDecomposition> {
    check_noise(data, noise, task)?;
    let traj = gd_solve(data.examples(), eta, t, &DenseVector::zeros(data.dim()))?;
    let total = excess_risk_raw(traj.last(), task)?;
    let (x, _) = design(data.examples())?;
    let ones = vec![1.0; task.dim()];
    split_risk(&x, &ones, task.weights().as_slice(), task, noise, eta, t, total, None)
}

/// Step count ceiling used when the schedule target is infinite or huge.
pub const SCHEDULE_STEP_CAP: usize = 1 << 16;

/// Step size and count from the preprocess-then-GD risk bound, with every
/// hidden constant set to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSuggestion {
    pub eta: f64,
    pub steps: usize,
    pub beta: f64,
    /// Target value of η·t.
    pub eta_t_target: f64,
    /// True when `steps` was clamped to [`SCHEDULE_STEP_CAP`].
    pub capped: bool,
}

pub fn theoretical_schedule(task: &SparseLinearTask, n: usize, delta: f64) -> Result<ScheduleSuggestion> {
    if task.support().is_empty() {
        return Err(contract("schedule needs a nonempty support"));
    }
    if n < 2 {
        return Err(contract(format!("schedule needs n >= 2, got {n}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(contract(format!("delta must lie in (0, 1), got {delta}")));
    }
    let r = population_reweighter(task);
    let r = r.diagonal();
    let cov = task.covariance().diagonal();
    let beta = task
        .support()
        .iter()
        .map(|&j| r[j].abs())
        .fold(f64::INFINITY, f64::min);
    let r_sigma_r: Vec<f64> = (0..task.dim()).map(|j| r[j] * r[j] * cov[j]).collect();
    let spectral = r_sigma_r.iter().copied().fold(0.0, f64::max).max(1e-6);
    let eta = 1.0 / (2.0 * spectral);

    let d = task.dim() as f64;
    let n = n as f64;
    let s = task.sparsity() as f64;
    let sigma2 = task.noise_std().powi(2);
    let log_term = (d / delta).ln();
    let trace_rsr: f64 = r_sigma_r.iter().sum();
    let trace_sigma: f64 = cov.iter().sum();
    let rate = sigma2 * trace_rsr * log_term / n + sigma2 * s * trace_sigma * log_term.powi(2) / (n * n);
    let eta_t_target = rate.powf(-0.5) / beta;

    let raw_steps = (eta_t_target / eta).ceil();
    let (steps, capped) = if raw_steps.is_finite() && raw_steps <= SCHEDULE_STEP_CAP as f64 {
        ((raw_steps as usize).max(1), false)
    } else {
        (SCHEDULE_STEP_CAP, true)
    };
    Ok(ScheduleSuggestion {
        eta,
        steps,
        beta,
        eta_t_target,
        capped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GdVariant {
    RawGd,
    PreGd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunedRate {
    pub eta: f64,
    /// Excess risk at step t; infinite when every grid point diverged.
    pub risk: f64,
}

/// Closed-form excess risk after `t` steps, or infinity if GD diverges.
pub fn gd_risk_at(variant: GdVariant, data: &InContextDataset, task: &SparseLinearTask, eta: f64, t: usize) -> Result<f64> {
    let traj = match variant {
        GdVariant::RawGd => gd_solve(data.examples(), eta, t, &DenseVector::zeros(data.dim())),
        GdVariant::PreGd => pre_gd_solve(data, eta, t),
    };
    match traj {
        Ok(traj) => {
            let risk = match traj.reweighter() {
                Some(r) => excess_risk_pre(traj.last(), r, task)?,
                None => excess_risk_raw(traj.last(), task)?,
            };
            Ok(if risk.is_finite() { risk } else { f64::INFINITY })
        }
        Err(Error::Diverged { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Picks the grid step size with the lowest excess risk at step `t`; ties go
/// to the larger step size.
pub fn tune_learning_rate(
    variant: GdVariant,
    data: &InContextDataset,
    task: &SparseLinearTask,
    t: usize,
    grid: &[f64],
) -> Result<TunedRate> {
    if grid.is_empty() {
        return Err(contract("learning-rate grid is empty"));
    }
    let mut best: Option<TunedRate> = None;
    for &eta in grid {
        let risk = gd_risk_at(variant, data, task, eta, t)?;
        let better = match best {
            None => true,
            Some(b) => risk < b.risk || (risk == b.risk && eta > b.eta),
        };
        if better {
            best = Some(TunedRate { eta, risk });
        }
    }
    Ok(best.expect("grid is nonempty"))
}

/// Effective raw-coordinate weights of a reweighted estimator: `R̂w̃`.
pub fn effective_weights(w_tilde: &DenseVector, r: &DiagonalReweighter) -> Result<DenseVector> {
    diag_apply(r.matrix(), w_tilde)
}
