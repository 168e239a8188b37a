//! Correlation-based feature reweighting.
//!
//! Each coordinate is rescaled by its estimated feature–label correlation
//! `r̂_j = (1/n) Σ_i x_ij y_i`. Coordinates on the support of `w*` end up with
//! large weights and the rest shrink toward zero, which is what makes the
//! subsequent gradient descent behave like a sparse method.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{diag_apply, DenseVector, DiagonalMatrix};
use crate::task::{Example, InContextDataset, Query, SparseLinearTask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub correlations: DenseVector,
    pub n_used: usize,
}

/// The estimated diagonal R̂.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalReweighter(DiagonalMatrix);

impl DiagonalReweighter {
    pub fn new(r: DiagonalMatrix) -> Self {
        Self(r)
    }

    pub fn identity(dim: usize) -> Self {
        Self(DiagonalMatrix::identity(dim))
    }

    pub fn matrix(&self) -> &DiagonalMatrix {
        &self.0
    }

    pub fn diagonal(&self) -> &[f64] {
        self.0.diagonal()
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }
}

/// The population diagonal R with `r_j = w*_j Σ_jj`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationReweighter(DiagonalMatrix);

impl PopulationReweighter {
    pub fn matrix(&self) -> &DiagonalMatrix {
        &self.0
    }

    pub fn diagonal(&self) -> &[f64] {
        self.0.diagonal()
    }
}

pub fn estimate_correlations(examples: &[Example]) -> Result<CorrelationEstimate> {
    let first = examples
        .first()
        .ok_or(Error::EmptySample("estimate_correlations"))?;
    let d = first.x.dim();
    let mut acc = vec![0.0; d];
    for e in examples {
        if e.x.dim() != d {
            return Err(Error::DimensionMismatch {
                op: "estimate_correlations",
                left: d,
                right: e.x.dim(),
            });
        }
        for (a, x) in acc.iter_mut().zip(e.x.as_slice()) {
            *a += x * e.y;
        }
    }
    let n = examples.len();
    let inv_n = 1.0 / n as f64;
    acc.iter_mut().for_each(|a| *a *= inv_n);
    Ok(CorrelationEstimate {
        correlations: DenseVector::new(acc)?,
        n_used: n,
    })
}

pub fn build_reweighter(c: &CorrelationEstimate) -> DiagonalReweighter {
    DiagonalReweighter(
        DiagonalMatrix::new(c.correlations.as_slice().to_vec())
            .expect("correlations are finite and nonempty"),
    )
}

pub fn population_reweighter(task: &SparseLinearTask) -> PopulationReweighter {
    let r = task
        .weights()
        .as_slice()
        .iter()
        .zip(task.covariance().diagonal())
        .map(|(w, s)| w * s)
        .collect();
    PopulationReweighter(DiagonalMatrix::new(r).expect("finite task"))
}

/// Replaces every example and query feature `x` by `R̂x`; labels are untouched.
pub fn apply_preprocess(
    data: &InContextDataset,
    reweighter: &DiagonalReweighter,
) -> Result<InContextDataset> {
    let r = reweighter.matrix();
    let examples = data
        .examples()
        .iter()
        .map(|e| {
            Ok(Example {
                x: diag_apply(r, &e.x)?,
                y: e.y,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let queries = data
        .queries()
        .iter()
        .map(|q| Ok(Query::new(diag_apply(r, &q.x)?, q.label_for_evaluation())))
        .collect::<Result<Vec<_>>>()?;
    InContextDataset::new(examples, queries)
}

/// Convenience: R̂ estimated from the examples of `data`.
pub fn reweighter_for(data: &InContextDataset) -> Result<DiagonalReweighter> {
    Ok(build_reweighter(&estimate_correlations(data.examples())?))
}

/// `‖R̂ − R‖₂`, the largest absolute diagonal gap.
pub fn reweighter_gap(estimate: &DiagonalReweighter, population: &PopulationReweighter) -> f64 {
    estimate
        .diagonal()
        .iter()
        .zip(population.diagonal())
        .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;
    use crate::task::{sample_dataset, sample_task, WeightPrior};

    fn v(x: &[f64]) -> DenseVector {
        DenseVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn correlation_examples() {
        let ex = vec![
            Example { x: v(&[1., 0.]), y: 2. },
            Example { x: v(&[0., 1.]), y: 3. },
        ];
        let c = estimate_correlations(&ex).unwrap();
        assert_eq!(c.correlations, v(&[1., 1.5]));
        assert_eq!(c.n_used, 2);

        let zero = vec![Example { x: v(&[4., -2.]), y: 0. }, Example { x: v(&[1., 1.]), y: 0. }];
        assert_eq!(estimate_correlations(&zero).unwrap().correlations, v(&[0., 0.]));

        let single = vec![Example { x: v(&[0.5, -3.]), y: 2. }];
        assert_eq!(estimate_correlations(&single).unwrap().correlations, v(&[1., -6.]));

        assert_eq!(
            estimate_correlations(&[]).unwrap_err(),
            Error::EmptySample("estimate_correlations")
        );
    }

    #[test]
    fn reweighter_reads_back_diagonal() {
        let c = CorrelationEstimate { correlations: v(&[1., 1.5]), n_used: 2 };
        let r = build_reweighter(&c);
        assert_eq!(r.diagonal(), &[1., 1.5]);
        assert_eq!(build_reweighter(&CorrelationEstimate { correlations: v(&[0., 0.]), n_used: 1 }).diagonal(), &[0., 0.]);
        let again = build_reweighter(&CorrelationEstimate { correlations: v(r.diagonal()), n_used: 2 });
        assert_eq!(again, r);
    }

    #[test]
    fn population_reweighter_examples() {
        let t = SparseLinearTask::new(v(&[1., -1.]), vec![0, 1], DiagonalMatrix::new(vec![2., 3.]).unwrap(), 0.0).unwrap();
        assert_eq!(population_reweighter(&t).diagonal(), &[2., -3.]);

        let t = SparseLinearTask::new(v(&[0., 0.5, 0.]), vec![1], DiagonalMatrix::identity(3), 0.0).unwrap();
        assert_eq!(population_reweighter(&t).diagonal(), t.weights().as_slice());

        let t = SparseLinearTask::new(v(&[0., 0.]), vec![], DiagonalMatrix::identity(2), 0.0).unwrap();
        assert_eq!(population_reweighter(&t).diagonal(), &[0., 0.]);
    }

    fn sample(seed: u64) -> InContextDataset {
        let mut rng = RandomSource::new(seed);
        let t = sample_task(6, 2, &DiagonalMatrix::identity(6), 0.2, WeightPrior::GaussianThenSparsify, &mut rng).unwrap();
        sample_dataset(&t, 12, 3, &mut rng).unwrap().0
    }

    #[test]
    fn apply_identity_and_zero() {
        let data = sample(1);
        assert_eq!(apply_preprocess(&data, &DiagonalReweighter::identity(6)).unwrap(), data);
        let zero = DiagonalReweighter::new(DiagonalMatrix::new(vec![0.0; 6]).unwrap());
        let out = apply_preprocess(&data, &zero).unwrap();
        for (a, b) in out.examples().iter().zip(data.examples()) {
            assert!(a.x.as_slice().iter().all(|v| *v == 0.0));
            assert_eq!(a.y, b.y);
        }
        for (a, b) in out.queries().iter().zip(data.queries()) {
            assert_eq!(a.label_for_evaluation(), b.label_for_evaluation());
        }
    }

    #[test]
    fn apply_composes_as_diagonal_product() {
        let data = sample(2);
        let r1 = DiagonalMatrix::new(vec![1., 2., 0.5, -1., 3., 0.]).unwrap();
        let r2 = DiagonalMatrix::new(vec![0.25, -2., 4., 1., 1., 7.]).unwrap();
        let two_step = apply_preprocess(
            &apply_preprocess(&data, &DiagonalReweighter::new(r1.clone())).unwrap(),
            &DiagonalReweighter::new(r2.clone()),
        )
        .unwrap();
        let one_step = apply_preprocess(&data, &DiagonalReweighter::new(r2.product(&r1).unwrap())).unwrap();
        // power-of-two scalings keep this exact; general entries agree to rounding
        for (a, b) in two_step.examples().iter().zip(one_step.examples()) {
            for j in 0..6 {
                assert!((a.x[j] - b.x[j]).abs() <= 1e-15 * (1.0 + a.x[j].abs()));
            }
            assert_eq!(a.y, b.y);
        }
    }

    #[test]
    fn apply_dimension_mismatch() {
        let data = sample(3);
        assert!(apply_preprocess(&data, &DiagonalReweighter::identity(5)).is_err());
    }

    #[test]
    fn sign_recovery_on_support_noiseless() {
        let rng = RandomSource::new(77);
        let (mut hits, mut total) = (0, 0);
        for trial in 0..100 {
            let mut r = rng.split_indexed("trial", trial);
            let t = sample_task(16, 4, &DiagonalMatrix::identity(16), 0.0, WeightPrior::RademacherOverSqrtS, &mut r).unwrap();
            let (data, _) = sample_dataset(&t, 1024, 1, &mut r).unwrap();
            let rhat = reweighter_for(&data).unwrap();
            let pop = population_reweighter(&t);
            for &j in t.support() {
                total += 1;
                if rhat.diagonal()[j].signum() == pop.diagonal()[j].signum() {
                    hits += 1;
                }
            }
        }
        assert!(hits as f64 / total as f64 >= 0.99, "{hits}/{total}");
    }
}
