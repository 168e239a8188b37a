//! Multi-head linear-attention transformer with a causal-free example mask.
//!
//! Layer update: `H ← W₁ (H + Concat_j[V_j M K_jᵀ Q_j])` with
//! `V_j = W_{V_j} H`, `K_j = W_{K_j} H`, `Q_j = W_{Q_j} H` and `M` the
//! diagonal 0/1 mask selecting the first `n` (example) columns.
//!
//! The hand-built weights below make layer 1 reweight features by the
//! estimated correlations and every later layer take one GD step on the
//! reweighted examples.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::task::{build_prompt, InContextDataset, PromptMatrix, SparseLinearTask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    pub value: DenseMatrix,
    pub key: DenseMatrix,
    pub query: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayerRepr")]
pub struct AttentionLayer {
    heads: Vec<AttentionHead>,
    mixer: DenseMatrix,
    head_mask: Vec<bool>,
}

#[derive(Deserialize)]
struct LayerRepr {
    heads: Vec<AttentionHead>,
    mixer: DenseMatrix,
    head_mask: Vec<bool>,
}

impl TryFrom<LayerRepr> for AttentionLayer {
    type Error = Error;

    fn try_from(r: LayerRepr) -> Result<Self> {
        let mut layer = AttentionLayer::new(r.heads, r.mixer)?;
        if r.head_mask.len() != layer.heads.len() {
            return Err(contract("head_mask length must equal head count"));
        }
        layer.head_mask = r.head_mask;
        Ok(layer)
    }
}

impl AttentionLayer {
    pub fn new(heads: Vec<AttentionHead>, mixer: DenseMatrix) -> Result<Self> {
        let hidden = mixer.rows();
        if heads.is_empty() || mixer.cols() != hidden || hidden % heads.len() != 0 {
            return Err(contract(format!(
                "layer needs >= 1 head dividing a square mixer, got {} heads, mixer {}x{}",
                heads.len(),
                mixer.rows(),
                mixer.cols()
            )));
        }
        let head_dim = hidden / heads.len();
        for (j, h) in heads.iter().enumerate() {
            for w in [&h.value, &h.key, &h.query] {
                if w.rows() != head_dim || w.cols() != hidden {
                    return Err(contract(format!(
                        "head {j}: expected {head_dim}x{hidden} projection, got {}x{}",
                        w.rows(),
                        w.cols()
                    )));
                }
            }
        }
        let head_mask = vec![false; heads.len()];
        Ok(Self {
            heads,
            mixer,
            head_mask,
        })
    }

    pub fn heads(&self) -> &[AttentionHead] {
        &self.heads
    }

    pub fn mixer(&self) -> &DenseMatrix {
        &self.mixer
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.mixer.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim() / self.head_count()
    }

    pub fn is_masked(&self, head: usize) -> bool {
        self.head_mask[head]
    }

    /// One layer update on `hidden` with the first `mask_width` columns visible.
    pub fn apply(&self, hidden: &DenseMatrix, mask_width: usize) -> Result<DenseMatrix> {
        let d_hid = self.hidden_dim();
        let m = hidden.cols();
        let head_dim = self.head_dim();
        let mut residual = hidden.clone();
        if mask_width > 0 {
            for (j, head) in self.heads.iter().enumerate() {
                if self.head_mask[j] {
                    continue;
                }
                let out = head_output(head, hidden, mask_width)?;
                let data = residual.data_mut();
                for r in 0..head_dim {
                    let dst = &mut data[(j * head_dim + r) * m..(j * head_dim + r + 1) * m];
                    for (o, v) in dst.iter_mut().zip(out.row(r)) {
                        *o += v;
                    }
                }
            }
        }
        debug_assert_eq!(residual.rows(), d_hid);
        self.mixer.matmul(&residual)
    }
}

/// `V M Kᵀ Q` for one head, computed as `(V_{:,<n} K_{:,<n}ᵀ) Q`.
fn head_output(head: &AttentionHead, hidden: &DenseMatrix, n: usize) -> Result<DenseMatrix> {
    let v = head.value.matmul(hidden)?;
    let k = head.key.matmul(hidden)?;
    let q = head.query.matmul(hidden)?;
    let hd = v.rows();
    let mut vk = DenseMatrix::zeros(hd, hd);
    for a in 0..hd {
        let v_row = &v.row(a)[..n];
        if v_row.iter().all(|x| *x == 0.0) {
            continue;
        }
        for b in 0..hd {
            let s: f64 = v_row.iter().zip(&k.row(b)[..n]).map(|(x, y)| x * y).sum();
            vk.set(a, b, s);
        }
    }
    vk.matmul(&q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr")]
pub struct AttentionModel {
    embedding: DenseMatrix,
    layers: Vec<AttentionLayer>,
    readout: DenseMatrix,
    mask_width: usize,
}

#[derive(Deserialize)]
struct ModelRepr {
    embedding: DenseMatrix,
    layers: Vec<AttentionLayer>,
    readout: DenseMatrix,
    mask_width: usize,
}

impl TryFrom<ModelRepr> for AttentionModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        AttentionModel::new(r.embedding, r.layers, r.readout, r.mask_width)
    }
}

impl AttentionModel {
    /// `embedding` is d_hid×(d+1), `readout` is 1×d_hid.
    pub fn new(
        embedding: DenseMatrix,
        layers: Vec<AttentionLayer>,
        readout: DenseMatrix,
        mask_width: usize,
    ) -> Result<Self> {
        let d_hid = embedding.rows();
        for (i, layer) in layers.iter().enumerate() {
            if layer.hidden_dim() != d_hid {
                return Err(Error::ShapeMismatch {
                    op: "AttentionModel::new",
                    layer: i + 1,
                    detail: format!("hidden dim {} != {d_hid}", layer.hidden_dim()),
                });
            }
        }
        if readout.rows() != 1 || readout.cols() != d_hid {
            return Err(contract(format!(
                "readout must be 1x{d_hid}, got {}x{}",
                readout.rows(),
                readout.cols()
            )));
        }
        if embedding.cols() < 2 {
            return Err(contract("embedding needs d+1 >= 2 input rows"));
        }
        Ok(Self {
            embedding,
            layers,
            readout,
            mask_width,
        })
    }

    pub fn dim(&self) -> usize {
        self.embedding.cols() - 1
    }

    pub fn hidden_dim(&self) -> usize {
        self.embedding.rows()
    }

    pub fn mask_width(&self) -> usize {
        self.mask_width
    }

    pub fn layers(&self) -> &[AttentionLayer] {
        &self.layers
    }

    pub fn embedding(&self) -> &DenseMatrix {
        &self.embedding
    }

    pub fn readout(&self) -> &DenseMatrix {
        &self.readout
    }

    /// Same model with the readout negated. Only useful for exercising the
    /// equivalence checks.
    pub fn with_negated_readout(&self) -> AttentionModel {
        let mut m = self.clone();
        m.readout.data_mut().iter_mut().for_each(|v| *v = -*v);
        m
    }

    fn set_mask(&self, layer: usize, head: usize, masked: bool) -> Result<AttentionModel> {
        let count = self.layers.len();
        let l = self.layers.get(layer).ok_or(Error::OutOfRange {
            what: "layer",
            index: layer,
            limit: count,
        })?;
        if head >= l.head_count() {
            return Err(Error::OutOfRange {
                what: "head",
                index: head,
                limit: l.head_count(),
            });
        }
        let mut m = self.clone();
        m.layers[layer].head_mask[head] = masked;
        Ok(m)
    }
}

/// Copy of `model` whose head `(layer, head)` (0-based) contributes a zero
/// slice to its layer's concatenation.
pub fn mask_head(model: &AttentionModel, layer: usize, head: usize) -> Result<AttentionModel> {
    model.set_mask(layer, head, true)
}

pub fn unmask_head(model: &AttentionModel, layer: usize, head: usize) -> Result<AttentionModel> {
    model.set_mask(layer, head, false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    /// `H⁰ = W_E E, H¹, …, H^L`.
    pub hidden: Vec<DenseMatrix>,
    /// `ŷ`, one entry per prompt column.
    pub predictions: DenseVector,
}

pub fn forward(model: &AttentionModel, prompt: &PromptMatrix) -> Result<ForwardTrace> {
    if prompt.dim() != model.dim() {
        return Err(Error::ShapeMismatch {
            op: "forward",
            layer: 0,
            detail: format!("prompt has d={}, model expects d={}", prompt.dim(), model.dim()),
        });
    }
    if prompt.n() != model.mask_width() {
        return Err(Error::ShapeMismatch {
            op: "forward",
            layer: 0,
            detail: format!(
                "prompt has n={} examples, model mask width is {}",
                prompt.n(),
                model.mask_width()
            ),
        });
    }
    let mut hidden = Vec::with_capacity(model.layers.len() + 1);
    hidden.push(model.embedding.matmul(prompt.entries())?);
    for (i, layer) in model.layers.iter().enumerate() {
        let next = layer
            .apply(hidden.last().expect("nonempty"), model.mask_width)
            .map_err(|e| Error::ShapeMismatch {
                op: "forward",
                layer: i + 1,
                detail: e.to_string(),
            })?;
        hidden.push(next);
    }
    let out = model.readout.matmul(hidden.last().expect("nonempty"))?;
    let predictions = DenseVector::new(out.row(0).to_vec())?;
    Ok(ForwardTrace {
        hidden,
        predictions,
    })
}

/// Input embedding that spreads each `(x_j, y, 0)` triple over hidden rows
/// `3j, 3j+1, 3j+2`.
pub fn preprocess_embedding(d: usize) -> DenseMatrix {
    let mut w = DenseMatrix::zeros(3 * d, d + 1);
    for j in 0..d {
        w.set(3 * j, j, 1.0);
        w.set(3 * j + 1, d, 1.0);
    }
    w
}

/// Layer with `d` heads of width 3 that writes `r̂_j x_j` into hidden row
/// `3j+2`, then a mixer that moves `x̃` to rows `0..d` and `y` to row `d`.
/// All other output rows are zero.
pub fn construct_preprocess_layer(d: usize, n: usize) -> Result<AttentionLayer> {
    if d == 0 || n == 0 {
        return Err(contract("preprocess layer needs d >= 1 and n >= 1"));
    }
    let d_hid = 3 * d;
    let heads = (0..d)
        .map(|i| {
            let mut key = DenseMatrix::zeros(3, d_hid);
            key.set(2, 3 * i + 1, 1.0 / n as f64);
            let mut select_x = DenseMatrix::zeros(3, d_hid);
            select_x.set(2, 3 * i, 1.0);
            AttentionHead {
                value: select_x.clone(),
                key,
                query: select_x,
            }
        })
        .collect();
    let mut mixer = DenseMatrix::zeros(d_hid, d_hid);
    for j in 0..d {
        mixer.set(j, 3 * j + 2, 1.0);
    }
    mixer.set(d, 1, 1.0);
    AttentionLayer::new(heads, mixer)
}

/// Single-head layer performing one GD step with step size `eta` on the
/// examples held in rows `0..d` (features) and row `d` (residual labels).
pub fn construct_gd_layer(d: usize, n: usize, eta: f64) -> Result<AttentionLayer> {
    if d == 0 || n == 0 {
        return Err(contract("GD layer needs d >= 1 and n >= 1"));
    }
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(contract(format!("GD layer step size must be >= 0, got {eta}")));
    }
    let d_hid = 3 * d;
    let mut value = DenseMatrix::zeros(d_hid, d_hid);
    value.set(d, d, -eta / n as f64);
    let mut select = DenseMatrix::zeros(d_hid, d_hid);
    for j in 0..d {
        select.set(j, j, 1.0);
    }
    AttentionLayer::new(
        vec![AttentionHead {
            value,
            key: select.clone(),
            query: select,
        }],
        DenseMatrix::identity(d_hid),
    )
}

/// Preprocessing layer followed by `k` GD layers. Row `d` of a query column
/// accumulates `−⟨w^k, x̃⟩`, so the readout is `−1` there.
pub fn assemble_icl_model(d: usize, n: usize, eta: f64, k: usize) -> Result<AttentionModel> {
    let mut layers = vec![construct_preprocess_layer(d, n)?];
    for _ in 0..k {
        layers.push(construct_gd_layer(d, n, eta)?);
    }
    let mut readout = DenseMatrix::zeros(1, 3 * d);
    readout.set(0, d, -1.0);
    AttentionModel::new(preprocess_embedding(d), layers, readout, n)
}

/// Rows `0..d` of the query columns of `H¹`: the reweighted query features.
pub fn extract_preprocessed(trace: &ForwardTrace, d: usize, n: usize, q: usize) -> Result<Vec<DenseVector>> {
    let h1 = trace
        .hidden
        .get(1)
        .ok_or_else(|| contract("trace needs at least one layer"))?;
    if h1.rows() < d || h1.cols() != n + q {
        return Err(Error::ShapeMismatch {
            op: "extract_preprocessed",
            layer: 1,
            detail: format!("H1 is {}x{}, need >= {d} rows and {} columns", h1.rows(), h1.cols(), n + q),
        });
    }
    Ok((n..n + q)
        .map(|c| DenseVector::from_vec_unchecked((0..d).map(|r| h1.get(r, c)).collect()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadImportance {
    /// ΔE per layer and head: masked error minus unmasked error.
    pub raw_deltas: Vec<Vec<f64>>,
    /// Row-normalized ΔE; flagged rows hold the raw values instead.
    pub normalized: Vec<Vec<f64>>,
    /// True for rows whose ΔE total is not positive.
    pub flagged: Vec<bool>,
    pub baseline_error: f64,
}

/// Mean squared prediction error over every query column of every instance.
pub fn query_error(model: &AttentionModel, eval: &[(SparseLinearTask, InContextDataset)]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (_, data) in eval {
        let trace = forward(model, &build_prompt(data))?;
        let n = data.n();
        for (k, q) in data.queries().iter().enumerate() {
            total += (trace.predictions[n + k] - q.label_for_evaluation()).powi(2);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn head_importance(
    model: &AttentionModel,
    eval: &[(SparseLinearTask, InContextDataset)],
) -> Result<HeadImportance> {
    if eval.is_empty() {
        return Err(Error::EmptySample("head_importance"));
    }
    if model.layers().is_empty() {
        return Err(contract("head importance needs at least one layer"));
    }
    let baseline = query_error(model, eval)?;
    let mut raw_deltas = Vec::with_capacity(model.layers().len());
    for (i, layer) in model.layers().iter().enumerate() {
        let row = (0..layer.head_count())
            .map(|j| Ok(query_error(&mask_head(model, i, j)?, eval)? - baseline))
            .collect::<Result<Vec<f64>>>()?;
        raw_deltas.push(row);
    }
    let (normalized, flagged) = normalize_importance(&raw_deltas);
    Ok(HeadImportance {
        raw_deltas,
        normalized,
        flagged,
        baseline_error: baseline,
    })
}

/// `W_ij = ΔE_ij / Σ_k ΔE_ik`; rows with a non-positive total stay raw and
/// are flagged.
pub fn normalize_importance(raw: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<bool>) {
    raw.iter()
        .map(|row| {
            let sum: f64 = row.iter().sum();
            if sum > 0.0 && sum.is_finite() {
                (row.iter().map(|v| v / sum).collect(), false)
            } else {
                (row.clone(), true)
            }
        })
        .unzip()
}
