use std::time::Instant;

use crate::data::{Dataset, MinMaxScaler};
use crate::error::{Error, Result};
use crate::kpca::{compute_dmin, default_components, kernel_tml_svm_train, kpca_map_batch};
use crate::metric::{build_pairs, mmc_train_counted, tml_nn_train};
use crate::persist::config::RunConfig;
use crate::persist::model_file::{ModelFile, StoredModel};
use crate::tml_svm::{tml_svm_train, TmlSvmModel};

/// Model kinds that can be trained into a model file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mmc,
    TmlNn,
    TmlSvm,
    KernelTmlSvm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Mmc, ModelKind::TmlNn, ModelKind::TmlSvm, ModelKind::KernelTmlSvm];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mmc => "mmc",
            ModelKind::TmlNn => "tml-nn",
            ModelKind::TmlSvm => "tml-svm",
            ModelKind::KernelTmlSvm => "ktml-svm",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        ModelKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub kind: ModelKind,
    /// Final training objective; summed over one-vs-one members for SVMs.
    pub objective: f64,
    pub iterations: usize,
    /// Largest constraint violation left after training (0 when feasible).
    pub max_violation: f64,
    pub training_accuracy: f64,
    pub seconds: f64,
}

impl TrainSummary {
    pub fn feasible(&self) -> bool {
        self.max_violation <= 1e-4
    }

    pub fn line(&self) -> String {
        format!(
            "method={} objective={:.6e} iterations={} constraints={} max_violation={:.3e} train_accuracy={:.4} time={:.3}s",
            self.kind.name(),
            self.objective,
            self.iterations,
            if self.feasible() { "feasible" } else { "violated" },
            self.max_violation,
            self.training_accuracy,
            self.seconds
        )
    }
}

fn svm_totals(m: &TmlSvmModel) -> (f64, usize) {
    m.bank.members.iter().fold((0.0, 0), |(o, it), (_, b)| {
        (
            o + b.report.objective_trace.last().copied().unwrap_or(0.0),
            it + b.report.outer_iterations,
        )
    })
}

/// Fits a min-max scaler on `data`, trains `kind` on the scaled features
/// and reports training accuracy through the assembled model file.
pub fn train_model(data: &Dataset, kind: ModelKind, config: &RunConfig) -> Result<(ModelFile, TrainSummary)> {
    let start = Instant::now();
    let scaler = MinMaxScaler::fit(&data.features)?;
    let x = scaler.apply(&data.features);
    let labels = &data.labels;
    let mut nn = config.tml_nn.clone();
    nn.seed = config.seed;
    let mut sv = config.tml_svm.clone();
    sv.seed = config.seed;

    let (model, objective, iterations, max_violation) = match kind {
        ModelKind::Mmc => {
            let pairs = build_pairs(labels, config.pair_caps(), config.seed)?;
            let (metric, iterations) = mmc_train_counted(&x, &pairs, &config.mmc)?;
            let sim: f64 = pairs
                .similar
                .iter()
                .map(|&(i, j)| {
                    let d = (x.row(i) - x.row(j)).transpose();
                    (d.transpose() * &metric.m * &d)[(0, 0)]
                })
                .sum();
            let model = StoredModel::Mmc {
                metric,
                reference: x.clone(),
                labels: labels.clone(),
            };
            (model, sim, iterations, 0.0)
        }
        ModelKind::TmlNn => {
            let m = tml_nn_train(&x, labels, &nn)?;
            let residual = m.transform.side_condition_residual(m.side_conditions);
            let r = &m.report;
            let (obj, it, viol) = (r.objective, r.iterations, r.max_violation.max(residual));
            let model = StoredModel::TmlNn {
                transform: m.transform,
                side_conditions: m.side_conditions,
                reference: x.clone(),
                labels: labels.clone(),
            };
            (model, obj, it, viol)
        }
        ModelKind::TmlSvm => {
            let m = tml_svm_train(&x, labels, &sv)?;
            let (obj, it) = svm_totals(&m);
            let viol = (m.max_training_reach(&x, labels)? - 1.0).max(0.0);
            (StoredModel::TmlSvm(m), obj, it, viol)
        }
        ModelKind::KernelTmlSvm => {
            let sigma = match config.kpca_sigma {
                Some(s) => s,
                None => compute_dmin(&x)?,
            };
            let q = config.kpca_components.unwrap_or_else(|| default_components(x.nrows()));
            let m = kernel_tml_svm_train(&x, labels, sigma, q, &sv)?;
            let (obj, it) = svm_totals(&m.inner);
            let z = kpca_map_batch(&m.kpca, &x)?;
            let viol = (m.inner.max_training_reach(&z, labels)? - 1.0).max(0.0);
            (StoredModel::KernelTmlSvm(m), obj, it, viol)
        }
    };
    let file = ModelFile {
        class_names: data.class_names.clone(),
        scaler: Some(scaler),
        model,
    };
    let predicted = file.predict_batch(&data.features)?;
    let correct = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    if !objective.is_finite() {
        return Err(Error::Divergence(format!("{} objective is not finite", kind.name())));
    }
    let summary = TrainSummary {
        kind,
        objective,
        iterations,
        max_violation,
        training_accuracy: correct as f64 / data.len() as f64,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((file, summary))
}
