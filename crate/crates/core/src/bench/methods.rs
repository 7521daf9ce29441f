use nalgebra::DMatrix;

use super::knn::KnnIndex;
use super::protocol::{best_candidate, cross_validate, Grids, Method};
use crate::error::{Error, Result};
use crate::kpca::{default_components, kernel_svm_train, kernel_tml_svm_train, SigmaHeuristic};
use crate::metric::{build_pairs, mmc_train, tml_nn_train, MmcConfig, TmlNnConfig};
use crate::svm::{ovo_predict, ovo_train, svm_train, SvmConfig};
use crate::tml_svm::{tml_svm_predict, tml_svm_train, TmlSvmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    /// Euclidean 1NN.
    Knn,
    /// 1NN under a learned Mahalanobis metric.
    Mmc,
    /// 1NN after a learned TPS transform.
    TmlNn,
    /// Linear SVM.
    LinearSvm,
    /// Gaussian-kernel SVM (linear SVM on full-rank KPCA features).
    KernelSvm,
    TmlSvm,
    KernelTmlSvm,
}

impl MethodKind {
    pub const ALL: [MethodKind; 7] = [
        MethodKind::Knn,
        MethodKind::Mmc,
        MethodKind::TmlNn,
        MethodKind::LinearSvm,
        MethodKind::KernelSvm,
        MethodKind::TmlSvm,
        MethodKind::KernelTmlSvm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Knn => "knn",
            MethodKind::Mmc => "mmc",
            MethodKind::TmlNn => "tml-nn",
            MethodKind::LinearSvm => "l-svm",
            MethodKind::KernelSvm => "r-svm",
            MethodKind::TmlSvm => "tml-svm",
            MethodKind::KernelTmlSvm => "ktml-svm",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        MethodKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// A benchmark method with its grids and base training configurations.
#[derive(Debug, Clone)]
pub struct BenchMethod {
    pub kind: MethodKind,
    pub grids: Grids,
    pub tml_nn: TmlNnConfig,
    pub tml_svm: TmlSvmConfig,
    pub mmc: MmcConfig,
    /// KPCA size for the kernel TML-SVM; `None` uses the default.
    pub kpca_components: Option<usize>,
}

impl BenchMethod {
    pub fn new(kind: MethodKind, grids: Grids) -> Self {
        BenchMethod {
            kind,
            grids,
            tml_nn: TmlNnConfig::default(),
            tml_svm: TmlSvmConfig::default(),
            mmc: MmcConfig::default(),
            kpca_components: None,
        }
    }

    fn sigma_grid(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(SigmaHeuristic::from_data(x)?.grid(self.grids.sigma_points))
    }

    fn kernel_svm_candidates(&self, x: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for s in self.sigma_grid(x)? {
            for &c in &self.grids.c1 {
                out.push(vec![s, c]);
            }
        }
        Ok(out)
    }
}

fn one_nn(train: DMatrix<f64>, labels: &[usize], test: &DMatrix<f64>) -> Result<Vec<usize>> {
    let index = KnnIndex::new(train, labels.to_vec())?;
    (0..test.nrows())
        .map(|i| index.predict(test.row(i).transpose().as_slice(), 1))
        .collect()
}

fn num_classes(labels: &[usize]) -> usize {
    labels.iter().copied().max().map_or(0, |m| m + 1)
}

fn predict_rows<F: Fn(&[f64]) -> Result<usize>>(test: &DMatrix<f64>, f: F) -> Result<Vec<usize>> {
    (0..test.nrows())
        .map(|i| f(test.row(i).transpose().as_slice()))
        .collect()
}

impl Method for BenchMethod {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn candidates(&self, x: &DMatrix<f64>, labels: &[usize], seed: u64) -> Result<Vec<Vec<f64>>> {
        let pairs = |a: &[f64], b: &[f64]| -> Vec<Vec<f64>> {
            a.iter().flat_map(|&u| b.iter().map(move |&v| vec![u, v])).collect()
        };
        Ok(match self.kind {
            MethodKind::Knn | MethodKind::Mmc => vec![vec![]],
            MethodKind::TmlNn => self.grids.lambda.iter().map(|&l| vec![l]).collect(),
            MethodKind::LinearSvm => self.grids.c1.iter().map(|&c| vec![c]).collect(),
            MethodKind::KernelSvm => self.kernel_svm_candidates(x)?,
            MethodKind::TmlSvm => pairs(&self.grids.c1, &self.grids.c2),
            MethodKind::KernelTmlSvm => {
                // The kernel width comes from the kernel-SVM selection.
                let rsvm = BenchMethod {
                    kind: MethodKind::KernelSvm,
                    ..self.clone()
                };
                let cands = rsvm.kernel_svm_candidates(x)?;
                let scores = cross_validate(x, labels, self.grids.inner_folds, seed ^ 0xA5A5, &cands, |c, a, b, q| {
                    rsvm.fit_predict(c, a, b, q, seed)
                })?;
                let sigma = cands[best_candidate(&scores)
                    .ok_or_else(|| Error::degenerate("no kernel width could be trained"))?][0];
                pairs(&self.grids.c1, &self.grids.c2)
                    .into_iter()
                    .map(|mut v| {
                        v.insert(0, sigma);
                        v
                    })
                    .collect()
            }
        })
    }

    fn fit_predict(
        &self,
        params: &[f64],
        x: &DMatrix<f64>,
        labels: &[usize],
        test: &DMatrix<f64>,
        seed: u64,
    ) -> Result<Vec<usize>> {
        match self.kind {
            MethodKind::Knn => one_nn(x.clone(), labels, test),
            MethodKind::Mmc => {
                let pairs = build_pairs(labels, self.tml_nn.pair_caps, seed)?;
                let m = mmc_train(x, &pairs, &self.mmc)?;
                let f = m.factor();
                one_nn(x * &f, labels, &(test * &f))
            }
            MethodKind::TmlNn => {
                let cfg = TmlNnConfig {
                    lambda: params[0],
                    seed,
                    ..self.tml_nn.clone()
                };
                let model = tml_nn_train(x, labels, &cfg)?;
                let t = &model.transform;
                one_nn(t.apply_batch(x)?, labels, &t.apply_batch(test)?)
            }
            MethodKind::LinearSvm => {
                let cfg = SvmConfig::with_c(params[0]);
                let bank = ovo_train(x, labels, num_classes(labels), |_, sx, sy| svm_train(sx, sy, &cfg))?;
                predict_rows(test, |r| ovo_predict(&bank, r))
            }
            MethodKind::KernelSvm => {
                let model = kernel_svm_train(x, labels, params[0], params[1])?;
                predict_rows(test, |r| model.predict(r))
            }
            MethodKind::TmlSvm => {
                let cfg = TmlSvmConfig {
                    c1: params[0],
                    c2: params[1],
                    seed,
                    ..self.tml_svm.clone()
                };
                let model = tml_svm_train(x, labels, &cfg)?;
                predict_rows(test, |r| tml_svm_predict(&model, r))
            }
            MethodKind::KernelTmlSvm => {
                let cfg = TmlSvmConfig {
                    c1: params[1],
                    c2: params[2],
                    seed,
                    ..self.tml_svm.clone()
                };
                let q = self.kpca_components.unwrap_or_else(|| default_components(x.nrows()));
                let model = kernel_tml_svm_train(x, labels, params[0], q, &cfg)?;
                predict_rows(test, |r| model.predict(r))
            }
        }
    }
}
