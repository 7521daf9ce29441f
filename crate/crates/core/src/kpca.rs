//! Gaussian kernel PCA with out-of-sample projection, and the kernelized
//! TML-SVM built on top of it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::svm::{ovo_predict, ovo_train, svm_train, OvoBank, SvmConfig, SvmModel};
use crate::tml_svm::{tml_svm_predict, tml_svm_train, TmlSvmConfig, TmlSvmModel};

/// Eigenvalues at or below this are treated as numerically zero.
pub const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct KpcaMap {
    pub train: DMatrix<f64>,
    pub sigma: f64,
    /// Retained eigenvalues of the centered Gram matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// `n × q`; column `r` is `v_r / √λ_r`.
    pub coefficients: DMatrix<f64>,
    /// Row means of the uncentered Gram matrix.
    pub row_means: Vec<f64>,
    pub grand_mean: f64,
}

fn gaussian(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>, sigma: f64) -> f64 {
    let d2: f64 = a.zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

fn gram(x: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let n = x.nrows();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = gaussian(x.row(i).iter().copied(), x.row(j).iter().copied(), sigma);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `HKH` with `H = I − 11ᵀ/n`, plus the statistics needed to center new
/// kernel vectors.
pub fn centered_gram(x: &DMatrix<f64>, sigma: f64) -> (DMatrix<f64>, Vec<f64>, f64) {
    let k = gram(x, sigma);
    let n = k.nrows();
    let row_means: Vec<f64> = k.row_iter().map(|r| r.sum() / n as f64).collect();
    let grand_mean = row_means.iter().sum::<f64>() / n as f64;
    let kc = DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - row_means[j] + grand_mean);
    (kc, row_means, grand_mean)
}

/// Default embedding size for `n` training rows.
pub fn default_components(n: usize) -> usize {
    n.saturating_sub(1).clamp(1, 100)
}

pub fn kpca_fit(x: &DMatrix<f64>, sigma: f64, q: usize) -> Result<KpcaMap> {
    let n = x.nrows();
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("sigma must be positive, got {sigma}")));
    }
    if q == 0 || q > n {
        return Err(Error::param(format!("component count {q} outside 1..={n}")));
    }
    let (kc, row_means, grand_mean) = centered_gram(x, sigma);
    let eig = SymmetricEigen::new(kc);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&r| eig.eigenvalues[r] > EIGEN_FLOOR)
        .take(q)
        .collect();
    if keep.len() < q {
        log::warn!(
            "kernel PCA keeps {} of {q} requested components (positive spectrum exhausted)",
            keep.len()
        );
    }
    let mut coefficients = DMatrix::zeros(n, keep.len());
    let mut eigenvalues = Vec::with_capacity(keep.len());
    for (c, &r) in keep.iter().enumerate() {
        let lambda = eig.eigenvalues[r];
        let mut v = eig.eigenvectors.column(r).clone_owned();
        // Fix the sign so the largest-magnitude entry is positive.
        let pivot = v.iter().copied().fold(0.0f64, |acc, e| if e.abs() > acc.abs() { e } else { acc });
        if pivot < 0.0 {
            v.neg_mut();
        }
        coefficients.set_column(c, &(v / lambda.sqrt()));
        eigenvalues.push(lambda);
    }
    Ok(KpcaMap {
        train: x.clone(),
        sigma,
        eigenvalues,
        coefficients,
        row_means,
        grand_mean,
    })
}

impl KpcaMap {
    pub fn output_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn input_dim(&self) -> usize {
        self.train.ncols()
    }

    fn centered_kernel_vector(&self, x: &[f64]) -> DVector<f64> {
        let n = self.train.nrows();
        let k = DVector::from_iterator(
            n,
            self.train
                .row_iter()
                .map(|r| gaussian(r.iter().copied(), x.iter().copied(), self.sigma)),
        );
        let mean = k.sum() / n as f64;
        DVector::from_iterator(
            n,
            k.iter()
                .zip(&self.row_means)
                .map(|(kj, rm)| kj - mean - rm + self.grand_mean),
        )
    }
}

pub fn kpca_map(map: &KpcaMap, x: &[f64]) -> Result<DVector<f64>> {
    if x.len() != map.input_dim() {
        return Err(Error::shape(format!(
            "point has {} coordinates, map expects {}",
            x.len(),
            map.input_dim()
        )));
    }
    Ok(map.coefficients.tr_mul(&map.centered_kernel_vector(x)))
}

/// Embeds every row of `x`.
pub fn kpca_map_batch(map: &KpcaMap, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(x.nrows(), map.output_dim());
    for i in 0..x.nrows() {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        out.set_row(i, &kpca_map(map, &row)?.transpose());
    }
    Ok(out)
}

/// Mean distance from each row to its nearest other row.
pub fn compute_dmin(x: &DMatrix<f64>) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::param("d_min needs at least two rows"));
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut best = f64::INFINITY;
        for j in 0..n {
            if i != j {
                best = best.min((x.row(i) - x.row(j)).norm());
            }
        }
        total += best;
    }
    Ok(total / n as f64)
}

/// Kernel-width grid `{m·d_min}` for multipliers spaced evenly between the
/// bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaHeuristic {
    pub d_min: f64,
    pub lo: f64,
    pub hi: f64,
}

impl SigmaHeuristic {
    /// Substitutes a small positive width when all rows coincide.
    pub fn from_data(x: &DMatrix<f64>) -> Result<Self> {
        let mut d_min = compute_dmin(x)?;
        if d_min <= 0.0 {
            log::warn!("all nearest-neighbour distances are zero; using d_min = 1e-6");
            d_min = 1e-6;
        }
        Ok(SigmaHeuristic {
            d_min,
            lo: 1.0,
            hi: 20.0,
        })
    }

    pub fn grid(&self, points: usize) -> Vec<f64> {
        if points <= 1 {
            return vec![self.lo * self.d_min];
        }
        (0..points)
            .map(|i| (self.lo + (self.hi - self.lo) * i as f64 / (points - 1) as f64) * self.d_min)
            .collect()
    }
}

/// Linear SVM bank over KPCA features: the Gaussian-kernel SVM baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSvmModel {
    pub kpca: KpcaMap,
    pub bank: OvoBank<SvmModel>,
}

pub fn kernel_svm_train(x: &DMatrix<f64>, labels: &[usize], sigma: f64, c: f64) -> Result<KernelSvmModel> {
    let kpca = kpca_fit(x, sigma, x.nrows())?;
    let z = kpca_map_batch(&kpca, x)?;
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let bank = ovo_train(&z, labels, k, |_, sx, sy| svm_train(sx, sy, &SvmConfig::with_c(c)))?;
    Ok(KernelSvmModel { kpca, bank })
}

impl KernelSvmModel {
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let z = kpca_map(&self.kpca, x)?;
        ovo_predict(&self.bank, z.as_slice())
    }
}

/// TML-SVM trained on KPCA features.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTmlSvmModel {
    pub kpca: KpcaMap,
    pub inner: TmlSvmModel,
}

pub fn kernel_tml_svm_train(
    x: &DMatrix<f64>,
    labels: &[usize],
    sigma: f64,
    q: usize,
    config: &TmlSvmConfig,
) -> Result<KernelTmlSvmModel> {
    let kpca = kpca_fit(x, sigma, q.min(x.nrows()).max(1))?;
    let z = kpca_map_batch(&kpca, x)?;
    let inner = tml_svm_train(&z, labels, config)?;
    Ok(KernelTmlSvmModel { kpca, inner })
}

impl KernelTmlSvmModel {
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let z = kpca_map(&self.kpca, x)?;
        tml_svm_predict(&self.inner, z.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dmin_examples() {
        let two = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 3.0, 0.0]);
        assert_eq!(compute_dmin(&two).unwrap(), 3.0);
        let h = 3f64.sqrt() / 2.0;
        let tri = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.5, h]);
        assert!((compute_dmin(&tri).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_maps_to_zero() {
        let x = DMatrix::from_row_slice(1, 2, &[0.3, 0.7]);
        let m = kpca_fit(&x, 1.0, 1).unwrap();
        assert_eq!(m.output_dim(), 0);
        assert_eq!(kpca_map(&m, &[0.3, 0.7]).unwrap().len(), 0);
    }

    #[test]
    fn symmetric_pair_midpoint_has_zero_first_coordinate() {
        let x = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        let m = kpca_fit(&x, 1.0, 2).unwrap();
        assert_eq!(m.output_dim(), 1);
        // Centered Gram of two points: (1 − k)/2·[[1, −1], [−1, 1]].
        let k = (-2.0f64).exp();
        assert!((m.eigenvalues[0] - (1.0 - k)).abs() < 1e-12);
        assert!(kpca_map(&m, &[0.0]).unwrap()[0].abs() < 1e-12);
    }

    #[test]
    fn training_rows_reproduce_embedding() {
        let x = DMatrix::from_row_slice(5, 2, &[0.0, 0.0, 1.0, 0.2, 0.3, 0.9, -0.5, 0.4, 0.8, -0.7]);
        let m = kpca_fit(&x, 0.8, 4).unwrap();
        let z = kpca_map_batch(&m, &x).unwrap();
        for r in 0..m.output_dim() {
            let col = z.column(r);
            assert!(col.sum().abs() < 1e-8);
            let var = col.norm_squared() / 5.0;
            assert!((var - m.eigenvalues[r] / 5.0).abs() <= 1e-6 * var);
        }
    }

    #[test]
    fn sigma_grid_spans_bounds() {
        let h = SigmaHeuristic {
            d_min: 0.5,
            lo: 1.0,
            hi: 20.0,
        };
        let g = h.grid(7);
        assert_eq!(g.len(), 7);
        assert_eq!(g[0], 0.5);
        assert_eq!(g[6], 10.0);
    }
}
