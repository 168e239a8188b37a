//! Small dense real linear algebra.
//!
//! Everything is `f64`, row-major, and validated finite on construction.
//! The sizes in this crate are tiny (d ≤ a few dozen, n ≤ a few thousand) so
//! the kernels are plain loops.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Dense column vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidShape {
                rows: 0,
                cols: 1,
                expected: 0,
                got: 0,
            });
        }
        check_finite(&entries)?;
        Ok(Self(entries))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Wraps values produced by this crate's own arithmetic. Callers check
    /// finiteness where it can actually fail (GD iterates).
    pub(crate) fn from_vec_unchecked(entries: Vec<f64>) -> Self {
        Self(entries)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &DenseVector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                op: "dot",
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(dot(&self.0, &other.0))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn scale(&self, c: f64) -> DenseVector {
        Self(self.0.iter().map(|v| c * v).collect())
    }

    pub fn sub(&self, other: &DenseVector) -> Result<DenseVector> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                op: "sub",
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    pub fn add(&self, other: &DenseVector) -> Result<DenseVector> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                op: "add",
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }
}

impl Index<usize> for DenseVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for DenseVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DenseVector> for Vec<f64> {
    fn from(v: DenseVector) -> Self {
        v.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixRepr> for DenseMatrix {
    type Error = Error;

    fn try_from(r: MatrixRepr) -> Result<Self> {
        Self::new(r.rows, r.cols, r.data)
    }
}

impl From<DenseMatrix> for MatrixRepr {
    fn from(m: DenseMatrix) -> Self {
        MatrixRepr {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::InvalidShape {
                rows,
                cols,
                expected: rows * cols,
                got: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a matrix whose rows are the given vectors.
    pub fn from_rows(rows: &[DenseVector]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptySample("from_rows"))?;
        let cols = first.dim();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.dim() != cols {
                return Err(Error::DimensionMismatch {
                    op: "from_rows",
                    left: cols,
                    right: r.dim(),
                });
            }
            data.extend_from_slice(r.as_slice());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub(crate) fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left: self.cols,
                right: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Columns `start..end` as a new matrix.
    pub fn column_block(&self, start: usize, end: usize) -> Result<DenseMatrix> {
        if start >= end || end > self.cols {
            return Err(Error::OutOfRange {
                what: "column block end",
                index: end,
                limit: self.cols,
            });
        }
        let width = end - start;
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Ok(Self {
            rows: self.rows,
            cols: width,
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                op: "max_abs_diff",
                left: self.data.len(),
                right: other.data.len(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs())))
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Diagonal matrix stored as its diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DiagonalMatrix(Vec<f64>);

impl DiagonalMatrix {
    pub fn new(diagonal: Vec<f64>) -> Result<Self> {
        if diagonal.is_empty() {
            return Err(Error::InvalidShape {
                rows: 0,
                cols: 0,
                expected: 0,
                got: 0,
            });
        }
        check_finite(&diagonal)?;
        Ok(Self(diagonal))
    }

    pub fn identity(dim: usize) -> Self {
        Self(vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.0
    }

    pub fn product(&self, other: &DiagonalMatrix) -> Result<DiagonalMatrix> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                op: "diag_product",
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect()))
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.dim(), self.dim());
        for (i, v) in self.0.iter().enumerate() {
            m.set(i, i, *v);
        }
        m
    }
}

impl TryFrom<Vec<f64>> for DiagonalMatrix {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DiagonalMatrix> for Vec<f64> {
    fn from(d: DiagonalMatrix) -> Self {
        d.0
    }
}

pub fn mat_vec(m: &DenseMatrix, v: &DenseVector) -> Result<DenseVector> {
    if m.cols() != v.dim() {
        return Err(Error::DimensionMismatch {
            op: "mat_vec",
            left: m.cols(),
            right: v.dim(),
        });
    }
    Ok(DenseVector(
        (0..m.rows()).map(|r| dot(m.row(r), v.as_slice())).collect(),
    ))
}

/// (1/n)·XᵀX for an n×d design whose rows are samples.
pub fn empirical_second_moment(x_rows: &DenseMatrix) -> Result<DenseMatrix> {
    let (n, d) = (x_rows.rows(), x_rows.cols());
    if n == 0 {
        return Err(Error::EmptySample("empirical_second_moment"));
    }
    let mut out = DenseMatrix::zeros(d, d);
    for r in 0..n {
        let row = x_rows.row(r);
        for i in 0..d {
            let xi = row[i];
            for j in i..d {
                out.data[i * d + j] += xi * row[j];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    for i in 0..d {
        for j in i..d {
            let v = out.get(i, j) * inv_n;
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    Ok(out)
}

pub fn diag_apply(r: &DiagonalMatrix, v: &DenseVector) -> Result<DenseVector> {
    if r.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            op: "diag_apply",
            left: r.dim(),
            right: v.dim(),
        });
    }
    Ok(DenseVector(
        r.0.iter().zip(v.as_slice()).map(|(a, b)| a * b).collect(),
    ))
}

/// Solves `a·x = b` for symmetric positive definite `a` by Cholesky.
/// Returns `None` when a pivot is not safely positive.
pub(crate) fn cholesky_solve(a: &DenseMatrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    debug_assert_eq!(n, a.cols());
    debug_assert_eq!(n, b.len());
    let scale = (0..n).fold(0.0_f64, |m, i| m.max(a.get(i, i).abs()));
    let floor = scale * 1e-13;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut diag = a.get(j, j);
        for k in 0..j {
            diag -= l[j * n + k] * l[j * n + k];
        }
        if !(diag > floor) {
            return None;
        }
        let ljj = diag.sqrt();
        l[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    let mut z = b.to_vec();
    for i in 0..n {
        let mut s = z[i];
        for k in 0..i {
            s -= l[i * n + k] * z[k];
        }
        z[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * z[k];
        }
        z[i] = s / l[i * n + i];
    }
    Some(z)
}

/// Minimum-norm least-squares solution of `x·w = y` via the SVD pseudo-inverse.
pub(crate) fn pinv_solve(x: &DenseMatrix, y: &[f64]) -> Vec<f64> {
    let m = nalgebra::DMatrix::from_row_slice(x.rows(), x.cols(), x.as_slice());
    let rhs = nalgebra::DVector::from_column_slice(y);
    let svd = m.svd(true, true);
    let max_sv = svd.singular_values.max();
    let eps = max_sv * 1e-12 * (x.rows().max(x.cols()) as f64);
    svd.solve(&rhs, eps)
        .map(|w| w.iter().copied().collect())
        .unwrap_or_else(|_| vec![0.0; x.cols()])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DenseVector {
        DenseVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn mat_vec_examples() {
        let id = DenseMatrix::identity(3);
        assert_eq!(mat_vec(&id, &v(&[1., 2., 3.])).unwrap(), v(&[1., 2., 3.]));
        let z = DenseMatrix::zeros(2, 2);
        assert_eq!(mat_vec(&z, &v(&[5., 7.])).unwrap(), v(&[0., 0.]));
        let m = DenseMatrix::new(2, 2, vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(mat_vec(&m, &v(&[1., 1.])).unwrap(), v(&[3., 7.]));
    }

    #[test]
    fn mat_vec_dimension_error_names_both_dims() {
        let m = DenseMatrix::zeros(2, 3);
        let err = mat_vec(&m, &v(&[1., 2.])).unwrap_err();
        assert_eq!(
            err,
            Error::DimensionMismatch {
                op: "mat_vec",
                left: 3,
                right: 2
            }
        );
        assert!(err.to_string().contains("3 vs 2"));
    }

    #[test]
    fn second_moment_examples() {
        let x = DenseMatrix::new(1, 2, vec![1., 0.]).unwrap();
        assert_eq!(
            empirical_second_moment(&x).unwrap().as_slice(),
            &[1., 0., 0., 0.]
        );
        let x = DenseMatrix::new(2, 2, vec![1., 1., 1., -1.]).unwrap();
        assert_eq!(
            empirical_second_moment(&x).unwrap().as_slice(),
            &[1., 0., 0., 1.]
        );
    }

    #[test]
    fn diag_apply_examples() {
        assert_eq!(
            diag_apply(&DiagonalMatrix::identity(2), &v(&[4., 5.])).unwrap(),
            v(&[4., 5.])
        );
        let mask = DiagonalMatrix::new(vec![0., 1.]).unwrap();
        assert_eq!(diag_apply(&mask, &v(&[9., 9.])).unwrap(), v(&[0., 9.]));
        let r = DiagonalMatrix::new(vec![2., -3.]).unwrap();
        assert_eq!(diag_apply(&r, &v(&[1., 1.])).unwrap(), v(&[2., -3.]));
        assert!(diag_apply(&r, &v(&[1.])).is_err());
    }

    #[test]
    fn construction_rejects_non_finite() {
        assert_eq!(
            DenseVector::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        );
        assert!(DenseMatrix::new(1, 2, vec![f64::INFINITY, 0.0]).is_err());
        assert!(DenseMatrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(DiagonalMatrix::new(vec![f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn cholesky_solves_spd_and_rejects_singular() {
        let a = DenseMatrix::new(2, 2, vec![4., 2., 2., 3.]).unwrap();
        let x = cholesky_solve(&a, &[2., 1.]).unwrap();
        assert!((4. * x[0] + 2. * x[1] - 2.).abs() < 1e-14);
        assert!((2. * x[0] + 3. * x[1] - 1.).abs() < 1e-14);
        let s = DenseMatrix::new(2, 2, vec![1., 1., 1., 1.]).unwrap();
        assert!(cholesky_solve(&s, &[1., 1.]).is_none());
    }

    #[test]
    fn pinv_gives_min_norm() {
        let x = DenseMatrix::new(1, 2, vec![1., 1.]).unwrap();
        let w = pinv_solve(&x, &[2.]);
        assert!((w[0] - 1.).abs() < 1e-12 && (w[1] - 1.).abs() < 1e-12);
    }

    #[test]
    fn serde_validates() {
        let m = DenseMatrix::new(1, 2, vec![1., 2.]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"rows":1,"cols":2,"data":[1.0,2.0]}"#);
        let bad = r#"{"rows":2,"cols":2,"data":[1.0]}"#;
        assert!(serde_json::from_str::<DenseMatrix>(bad).is_err());
    }
}
