//! Iterative nullspace projection: repeatedly fit a linear classifier and
//! project the representations onto the nullspace of its directions.

use nalgebra::{DMatrix, DVector};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::probing::{default_l2, train_logistic, TrainOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct InlpResult {
    pub projected: FeatureMatrix,
    /// Symmetric idempotent projector, dims × dims.
    pub projection: DMatrix<f64>,
    /// Orthonormal basis of the removed directions, dims × removed.
    pub removed_basis: DMatrix<f64>,
    /// Rank of the removed subspace after each iteration.
    pub removed_rank: Vec<usize>,
    /// Largest |cosine| between each iteration's classifier directions and
    /// the directions removed before it.
    pub max_overlap: Vec<f64>,
}

const DIRECTION_FLOOR: f64 = 1e-10;

pub fn inlp_remove(w: &FeatureMatrix, labels: &[usize], iterations: usize) -> Result<InlpResult> {
    if iterations == 0 {
        return Err(Error::invalid("INLP needs at least one iteration"));
    }
    if labels.len() != w.rows() {
        return Err(Error::dims(format!("{} labels for {} rows", labels.len(), w.rows())));
    }
    let d = w.cols();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut projection = DMatrix::<f64>::identity(d, d);
    let mut projected = w.values().clone();
    let mut removed_rank = Vec::with_capacity(iterations);
    let mut max_overlap = Vec::with_capacity(iterations);
    let l2 = default_l2(labels.len());

    for it in 0..iterations {
        let model = train_logistic(&projected, labels, l2, TrainOptions::default()).map_err(
            |e| match e {
                Error::Diverged { .. } => Error::Diverged { iteration: it },
                other => other,
            },
        )?;
        // Softmax is unchanged by a shared shift of class weights, so the
        // decision directions are the class weights minus their mean: k − 1
        // independent directions for k classes.
        let mean = model.weights.column_mean();
        let mut overlap = 0.0f64;
        for c in 0..model.classes.saturating_sub(1).max(1) {
            let mut v: DVector<f64> = model.weights.column(c) - &mean;
            let norm = v.norm();
            if norm <= DIRECTION_FLOOR {
                continue;
            }
            for b in &basis {
                overlap = overlap.max((b.dot(&v) / norm).abs());
            }
            // two passes of Gram–Schmidt keep the basis orthonormal
            for _ in 0..2 {
                for b in &basis {
                    let proj = b.dot(&v);
                    v.axpy(-proj, b, 1.0);
                }
            }
            let residual = v.norm();
            if residual > DIRECTION_FLOOR * norm.max(1.0) {
                basis.push(v / residual);
            }
        }
        max_overlap.push(overlap);
        removed_rank.push(basis.len());

        let b = DMatrix::from_columns(&basis);
        projection = DMatrix::identity(d, d) - &b * b.transpose();
        projected = w.values() * &projection;
    }

    let removed_basis = if basis.is_empty() {
        DMatrix::zeros(d, 0)
    } else {
        DMatrix::from_columns(&basis)
    };
    Ok(InlpResult {
        projected: w.with_values(projected)?,
        projection,
        removed_basis,
        removed_rank,
        max_overlap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::UnitKind;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn planted(n: usize, d: usize, classes: usize, seed: u64) -> (FeatureMatrix, Vec<usize>) {
        let mut rng = crate::seed::rng(seed);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let x = DMatrix::from_fn(n, d, |r, c| {
            let noise: f64 = rng.sample(StandardNormal);
            if c == 0 {
                3.0 * labels[r] as f64 + noise
            } else {
                noise
            }
        });
        (FeatureMatrix::new(x, 1, UnitKind::Word).unwrap(), labels)
    }

    #[test]
    fn projector_is_symmetric_idempotent() {
        let (w, y) = planted(300, 8, 3, 1);
        let res = inlp_remove(&w, &y, 3).unwrap();
        let p = &res.projection;
        assert!((p - p.transpose()).amax() <= 1e-12);
        assert!((p * p - p).amax() <= 1e-6);
    }

    #[test]
    fn rank_grows_by_at_most_classes_minus_one() {
        let (w, y) = planted(300, 10, 3, 2);
        let res = inlp_remove(&w, &y, 4).unwrap();
        let mut prev = 0;
        for &r in &res.removed_rank {
            assert!(r - prev <= 2, "{:?}", res.removed_rank);
            prev = r;
        }
        assert_eq!(res.removed_basis.ncols(), *res.removed_rank.last().unwrap());
    }

    #[test]
    fn later_directions_are_orthogonal_to_removed_ones() {
        let (w, y) = planted(300, 8, 2, 3);
        let res = inlp_remove(&w, &y, 5).unwrap();
        for &o in &res.max_overlap {
            assert!(o < 1e-6, "{:?}", res.max_overlap);
        }
    }

    #[test]
    fn zero_iterations_rejected() {
        let (w, y) = planted(20, 3, 2, 4);
        assert!(inlp_remove(&w, &y, 0).is_err());
    }
}
