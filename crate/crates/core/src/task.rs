//! Sparse linear regression tasks, in-context datasets and the prompt matrix.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::linalg::{dot, DenseMatrix, DenseVector, DiagonalMatrix};
use crate::preprocess::DiagonalReweighter;
use crate::rng::RandomSource;

/// Distribution of the nonzero ground-truth weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPrior {
    /// Support weights drawn from N(0, 1).
    GaussianThenSparsify,
    /// Support weights ±1/√s with equal probability, so ‖w*‖₂ = 1.
    RademacherOverSqrtS,
}

/// Ground truth `w*`, diagonal feature covariance and label noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseLinearTask {
    weights: DenseVector,
    support: Vec<usize>,
    covariance: DiagonalMatrix,
    noise_std: f64,
}

impl SparseLinearTask {
    /// `support` must be sorted-unique and contain every nonzero of `weights`.
    pub fn new(
        weights: DenseVector,
        support: Vec<usize>,
        covariance: DiagonalMatrix,
        noise_std: f64,
    ) -> Result<Self> {
        let d = weights.dim();
        if covariance.dim() != d {
            return Err(Error::DimensionMismatch {
                op: "SparseLinearTask::new",
                left: d,
                right: covariance.dim(),
            });
        }
        if covariance.diagonal().iter().any(|v| *v < 0.0) {
            return Err(contract("covariance diagonal must be nonnegative"));
        }
        if !(noise_std >= 0.0) || !noise_std.is_finite() {
            return Err(contract(format!("noise_std must be >= 0, got {noise_std}")));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) || support.iter().any(|&j| j >= d) {
            return Err(contract("support must be sorted, unique and within 0..d"));
        }
        for j in 0..d {
            if weights[j] != 0.0 && support.binary_search(&j).is_err() {
                return Err(contract(format!("w*[{j}] is nonzero outside the support")));
            }
        }
        Ok(Self {
            weights,
            support,
            covariance,
            noise_std,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.dim()
    }

    pub fn sparsity(&self) -> usize {
        self.support.len()
    }

    pub fn weights(&self) -> &DenseVector {
        &self.weights
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn covariance(&self) -> &DiagonalMatrix {
        &self.covariance
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }
}

pub fn sample_task(
    d: usize,
    s: usize,
    covariance: &DiagonalMatrix,
    noise_std: f64,
    prior: WeightPrior,
    rng: &mut RandomSource,
) -> Result<SparseLinearTask> {
    if s == 0 || s > d {
        return Err(contract(format!("need 1 <= s <= d, got s={s}, d={d}")));
    }
    let mut support: Vec<usize> = rng.permutation(d).into_iter().take(s).collect();
    support.sort_unstable();
    sample_task_on_support(d, support, covariance, noise_std, prior, rng)
}

/// Like [`sample_task`] but with a fixed, caller-chosen support.
pub fn sample_task_on_support(
    d: usize,
    mut support: Vec<usize>,
    covariance: &DiagonalMatrix,
    noise_std: f64,
    prior: WeightPrior,
    rng: &mut RandomSource,
) -> Result<SparseLinearTask> {
    support.sort_unstable();
    support.dedup();
    let s = support.len();
    if s == 0 || support.iter().any(|&j| j >= d) {
        return Err(contract(format!("support must be nonempty and within 0..{d}")));
    }
    let mut w = vec![0.0; d];
    let amplitude = 1.0 / (s as f64).sqrt();
    for &j in &support {
        w[j] = match prior {
            WeightPrior::GaussianThenSparsify => rng.normal(),
            WeightPrior::RademacherOverSqrtS => {
                if rng.coin() {
                    amplitude
                } else {
                    -amplitude
                }
            }
        };
    }
    SparseLinearTask::new(DenseVector::new(w)?, support, covariance.clone(), noise_std)
}

/// A labeled in-context example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: DenseVector,
    pub y: f64,
}

/// A query feature with its true label held back for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub x: DenseVector,
    y_true: f64,
}

impl Query {
    pub fn new(x: DenseVector, y_true: f64) -> Self {
        Self { x, y_true }
    }

    /// The held-out label. Only evaluation code should call this.
    pub fn label_for_evaluation(&self) -> f64 {
        self.y_true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InContextDataset {
    examples: Vec<Example>,
    queries: Vec<Query>,
}

impl InContextDataset {
    pub fn new(examples: Vec<Example>, queries: Vec<Query>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptySample("InContextDataset examples"));
        }
        if queries.is_empty() {
            return Err(Error::EmptySample("InContextDataset queries"));
        }
        let d = examples[0].x.dim();
        let dims = examples.iter().map(|e| e.x.dim()).chain(queries.iter().map(|q| q.x.dim()));
        for dim in dims {
            if dim != d {
                return Err(Error::DimensionMismatch {
                    op: "InContextDataset::new",
                    left: d,
                    right: dim,
                });
            }
        }
        if examples.iter().any(|e| !e.y.is_finite()) {
            return Err(contract("example labels must be finite"));
        }
        Ok(Self { examples, queries })
    }

    pub fn dim(&self) -> usize {
        self.examples[0].x.dim()
    }

    pub fn n(&self) -> usize {
        self.examples.len()
    }

    pub fn q(&self) -> usize {
        self.queries.len()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }
}

/// Draws `n` examples and `q` queries. Returns the realized example noise ε
/// alongside the dataset.
pub fn sample_dataset(
    task: &SparseLinearTask,
    n: usize,
    q: usize,
    rng: &mut RandomSource,
) -> Result<(InContextDataset, DenseVector)> {
    if n == 0 || q == 0 {
        return Err(contract(format!("need n >= 1 and q >= 1, got n={n}, q={q}")));
    }
    let d = task.dim();
    let scale: Vec<f64> = task.covariance().diagonal().iter().map(|v| v.sqrt()).collect();
    let w = task.weights().as_slice();
    let sigma = task.noise_std();
    let draw = |rng: &mut RandomSource| {
        let x: Vec<f64> = (0..d).map(|j| scale[j] * rng.normal()).collect();
        let eps = sigma * rng.normal();
        let y = dot(&x, w) + eps;
        (DenseVector::from_vec_unchecked(x), y, eps)
    };
    let mut examples = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, y, eps) = draw(rng);
        examples.push(Example { x, y });
        noise.push(eps);
    }
    let queries = (0..q)
        .map(|_| {
            let (x, y, _) = draw(rng);
            Query::new(x, y)
        })
        .collect();
    Ok((
        InContextDataset::new(examples, queries)?,
        DenseVector::from_vec_unchecked(noise),
    ))
}

/// The (d+1)×(n+q) input embedding: example columns `(x_i; y_i)` followed by
/// query columns `(x; 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMatrix {
    entries: DenseMatrix,
    n: usize,
    q: usize,
}

impl PromptMatrix {
    /// Wraps a raw matrix. `n` may be zero, in which case every column is a
    /// query and the attention mask selects nothing.
    pub fn from_parts(entries: DenseMatrix, n: usize) -> Result<Self> {
        let cols = entries.cols();
        if n > cols || entries.rows() < 2 {
            return Err(contract(format!(
                "prompt needs >= 2 rows and n <= columns ({n} > {cols})"
            )));
        }
        let d = entries.rows() - 1;
        if (n..cols).any(|c| entries.get(d, c) != 0.0) {
            return Err(contract("query label slots must be zero"));
        }
        Ok(Self {
            entries,
            n,
            q: cols - n,
        })
    }

    pub fn entries(&self) -> &DenseMatrix {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.rows() - 1
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Reads example columns back as `(x, y)` pairs.
    pub fn example_columns(&self) -> Vec<(DenseVector, f64)> {
        let d = self.dim();
        (0..self.n)
            .map(|c| {
                let col = self.entries.column(c);
                (DenseVector::from_vec_unchecked(col[..d].to_vec()), col[d])
            })
            .collect()
    }

    pub fn query_columns(&self) -> Vec<DenseVector> {
        let d = self.dim();
        (self.n..self.n + self.q)
            .map(|c| DenseVector::from_vec_unchecked(self.entries.column(c)[..d].to_vec()))
            .collect()
    }
}

pub fn build_prompt(data: &InContextDataset) -> PromptMatrix {
    let d = data.dim();
    let (n, q) = (data.n(), data.q());
    let cols = n + q;
    let mut m = DenseMatrix::zeros(d + 1, cols);
    for (c, e) in data.examples().iter().enumerate() {
        for j in 0..d {
            m.set(j, c, e.x[j]);
        }
        m.set(d, c, e.y);
    }
    for (k, qr) in data.queries().iter().enumerate() {
        for j in 0..d {
            m.set(j, n + k, qr.x[j]);
        }
    }
    PromptMatrix { entries: m, n, q }
}

fn sigma_quadratic(diff: &DenseVector, task: &SparseLinearTask) -> f64 {
    diff.as_slice()
        .iter()
        .zip(task.covariance().diagonal())
        .map(|(e, s)| s * e * e)
        .sum()
}

/// Population excess risk `(w − w*)ᵀ Σ (w − w*)`.
pub fn excess_risk_raw(w: &DenseVector, task: &SparseLinearTask) -> Result<f64> {
    let diff = w.sub(task.weights())?;
    Ok(sigma_quadratic(&diff, task))
}

/// Population excess risk of the predictor `x ↦ ⟨R̂x, w̃⟩`.
pub fn excess_risk_pre(
    w_tilde: &DenseVector,
    reweighter: &DiagonalReweighter,
    task: &SparseLinearTask,
) -> Result<f64> {
    let effective = crate::linalg::diag_apply(reweighter.matrix(), w_tilde)?;
    excess_risk_raw(&effective, task)
}

/// Examples as an n×d design matrix and label vector.
pub fn design(examples: &[Example]) -> Result<(DenseMatrix, Vec<f64>)> {
    if examples.is_empty() {
        return Err(Error::EmptySample("design"));
    }
    let xs: Vec<DenseVector> = examples.iter().map(|e| e.x.clone()).collect();
    let ys = examples.iter().map(|e| e.y).collect();
    Ok((DenseMatrix::from_rows(&xs)?, ys))
}
