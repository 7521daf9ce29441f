use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Feature matrix (one sample per row) with dense class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    /// Original label text, indexed by class id (first-seen order).
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::param(format!("label {bad} has no class name")));
        }
        Ok(Dataset {
            features,
            labels,
            class_names,
        })
    }

    /// Class ids `0..k` named by their decimal value.
    pub fn with_numeric_classes(features: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().copied().max().map_or(0, |m| m + 1);
        let names = (0..k).map(|c| c.to_string()).collect();
        Dataset::new(features, labels, names)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: select_rows(&self.features, rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// Per-feature min-max scaling to `[0, 1]`, fitted on training rows only.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    /// Zero-range features keep a range of 1 so they map to 0.
    pub range: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::param("cannot fit a scaler on zero rows"));
        }
        let mut min = Vec::with_capacity(x.ncols());
        let mut range = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            min.push(lo);
            range.push(if hi > lo { hi - lo } else { 1.0 });
        }
        Ok(MinMaxScaler { min, range })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.min.iter().zip(&self.range))
            .map(|(v, (lo, r))| (v - lo) / r)
            .collect()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.min[j]) / self.range[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaler_maps_training_range_to_unit_interval() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 3.0, 5.0, 2.0, 5.0]);
        let s = MinMaxScaler::fit(&x).unwrap();
        let y = s.apply(&x);
        assert_eq!(y.column(0).as_slice(), &[0.0, 1.0, 0.5]);
        assert_eq!(y.column(1).as_slice(), &[0.0, 0.0, 0.0]);
        assert_eq!(s.apply_row(&[5.0, 6.0]), vec![2.0, 1.0]);
    }

    #[test]
    fn dataset_checks_shapes() {
        let x = DMatrix::zeros(2, 1);
        assert!(Dataset::with_numeric_classes(x.clone(), vec![0]).is_err());
        let d = Dataset::with_numeric_classes(x, vec![0, 2]).unwrap();
        assert_eq!(d.num_classes(), 3);
        assert_eq!(d.subset(&[1]).labels, vec![2]);
    }
}
