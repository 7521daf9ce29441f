use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::svm::argmax_lowest;
use crate::tps::TpsTransform;

/// Labeled reference points in the space where Euclidean distance is taken.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    pub points: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl KnnIndex {
    pub fn new(points: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::param("kNN needs a non-empty training set"));
        }
        if points.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} rows but {} labels",
                points.nrows(),
                labels.len()
            )));
        }
        Ok(KnnIndex { points, labels })
    }

    /// Majority label of the `k` nearest points. Equal distances prefer the
    /// lower index; equal votes prefer the lower class id.
    pub fn predict(&self, query: &[f64], k: usize) -> Result<usize> {
        let n = self.points.nrows();
        if k == 0 || k > n {
            return Err(Error::param(format!("k = {k} outside 1..={n}")));
        }
        if query.len() != self.points.ncols() {
            return Err(Error::shape(format!(
                "query has {} coordinates, index has {}",
                query.len(),
                self.points.ncols()
            )));
        }
        let mut dist: Vec<(f64, usize)> = self
            .points
            .row_iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        if k == 1 {
            let best = dist
                .iter()
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .expect("non-empty");
            return Ok(self.labels[best.1]);
        }
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let classes = self.labels.iter().copied().max().unwrap_or(0) + 1;
        let mut votes = vec![0usize; classes];
        for &(_, i) in &dist[..k] {
            votes[self.labels[i]] += 1;
        }
        Ok(argmax_lowest(&votes))
    }
}

/// kNN with distances measured after applying `transform` (identity when
/// `None`) to both sides.
pub fn knn_predict(
    train: &DMatrix<f64>,
    labels: &[usize],
    query: &[f64],
    k: usize,
    transform: Option<&TpsTransform>,
) -> Result<usize> {
    match transform {
        None => KnnIndex::new(train.clone(), labels.to_vec())?.predict(query, k),
        Some(t) => {
            let index = KnnIndex::new(t.apply_batch(train)?, labels.to_vec())?;
            index.predict(t.apply(query)?.as_slice(), k)
        }
    }
}

/// Leave-one-out 1NN accuracy of the rows of `x`.
pub fn loo_1nn_accuracy(x: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    let n = x.nrows();
    if n < 2 || labels.len() != n {
        return Err(Error::shape("leave-one-out needs at least two labeled rows"));
    }
    let mut correct = 0;
    for i in 0..n {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..n {
            if j != i {
                let d = (x.row(i) - x.row(j)).norm_squared();
                if d < best.0 {
                    best = (d, j);
                }
            }
        }
        if labels[best.1] == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_on_training_point() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        assert_eq!(knn_predict(&x, &[2, 0, 1], &[1.0], 1, None).unwrap(), 0);
    }

    #[test]
    fn k_equals_n_gives_majority() {
        let x = DMatrix::from_row_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let labels = [1, 0, 1, 0, 1];
        for q in [-10.0, 0.5, 100.0] {
            assert_eq!(knn_predict(&x, &labels, &[q], 5, None).unwrap(), 1);
        }
    }

    #[test]
    fn ties_prefer_lower_index_and_class() {
        let x = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        assert_eq!(knn_predict(&x, &[1, 0], &[0.0], 1, None).unwrap(), 1);
        assert_eq!(knn_predict(&x, &[1, 0], &[0.0], 2, None).unwrap(), 0);
    }

    #[test]
    fn errors() {
        let x = DMatrix::<f64>::zeros(0, 1);
        assert!(knn_predict(&x, &[], &[0.0], 1, None).is_err());
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        assert!(knn_predict(&x, &[0], &[0.0], 2, None).is_err());
    }
}
