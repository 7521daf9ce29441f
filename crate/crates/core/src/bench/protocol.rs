use nalgebra::DMatrix;
use rayon::prelude::*;

use super::split::{complement, stratified_folds, SplitPlan};
use super::stats::ScoreBoard;
use crate::data::{select_rows, Dataset, MinMaxScaler};
use crate::error::{Error, Result};

/// A classifier family with its own hyperparameter candidates.
pub trait Method: Send + Sync {
    fn name(&self) -> &str;

    /// Hyperparameter vectors to choose from for this (normalized) training
    /// set. A single candidate skips cross-validation.
    fn candidates(&self, x: &DMatrix<f64>, labels: &[usize], seed: u64) -> Result<Vec<Vec<f64>>>;

    /// Trains on `(x, labels)` with `params` and predicts every row of `test`.
    fn fit_predict(
        &self,
        params: &[f64],
        x: &DMatrix<f64>,
        labels: &[usize],
        test: &DMatrix<f64>,
        seed: u64,
    ) -> Result<Vec<usize>>;
}

/// `points` values `base^e` with exponents evenly spaced over `[lo, hi]`.
pub fn exp_grid(base: f64, lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![base.powf(lo)];
    }
    (0..points)
        .map(|i| base.powf(lo + (hi - lo) * i as f64 / (points - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    pub lambda: Vec<f64>,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    /// Number of kernel widths between `d_min` and `20·d_min`.
    pub sigma_points: usize,
    pub inner_folds: usize,
}

impl Grids {
    /// Seven points per axis.
    pub fn desk() -> Self {
        Grids::with_points(7, 7)
    }

    /// One point per integer exponent, twenty kernel widths.
    pub fn full() -> Self {
        Grids {
            lambda: exp_grid(5.0, -5.0, 25.0, 31),
            c1: exp_grid(2.0, -5.0, 15.0, 21),
            c2: exp_grid(5.0, -5.0, 25.0, 31),
            sigma_points: 20,
            inner_folds: 3,
        }
    }

    pub fn with_points(points: usize, sigma_points: usize) -> Self {
        Grids {
            lambda: exp_grid(5.0, -5.0, 25.0, points),
            c1: exp_grid(2.0, -5.0, 15.0, points),
            c2: exp_grid(5.0, -5.0, 25.0, points),
            sigma_points,
            inner_folds: 3,
        }
    }
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Fits a min-max scaler on the training rows and applies it to both sides.
pub fn normalize_split(train: &DMatrix<f64>, test: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let s = MinMaxScaler::fit(train)?;
    Ok((s.apply(train), s.apply(test)))
}

/// Mean validation accuracy of each candidate over stratified folds.
/// Candidates that fail on any fold score `None`.
pub fn cross_validate<F>(
    x: &DMatrix<f64>,
    labels: &[usize],
    folds: usize,
    seed: u64,
    candidates: &[Vec<f64>],
    mut fit_predict: F,
) -> Result<Vec<Option<f64>>>
where
    F: FnMut(&[f64], &DMatrix<f64>, &[usize], &DMatrix<f64>) -> Result<Vec<usize>>,
{
    let parts = stratified_folds(labels, folds, seed)?;
    let mut splits = Vec::with_capacity(folds);
    for f in 0..folds {
        let tr = complement(&parts, f);
        let (xtr, xva) = normalize_split(&select_rows(x, &tr), &select_rows(x, &parts[f]))?;
        let ytr: Vec<usize> = tr.iter().map(|&i| labels[i]).collect();
        let yva: Vec<usize> = parts[f].iter().map(|&i| labels[i]).collect();
        splits.push((xtr, ytr, xva, yva));
    }
    Ok(candidates
        .iter()
        .map(|c| {
            let mut total = 0.0;
            for (xtr, ytr, xva, yva) in &splits {
                match fit_predict(c, xtr, ytr, xva) {
                    Ok(pred) => total += accuracy(&pred, yva),
                    Err(e) => {
                        log::debug!("candidate {c:?} failed: {e}");
                        return None;
                    }
                }
            }
            Some(total / folds as f64)
        })
        .collect())
}

/// Index of the best score; the first wins ties.
pub fn best_candidate(scores: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(v) = *s {
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

const INNER_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

/// Picks hyperparameters by inner cross-validation, retrains on the whole
/// training part and returns test predictions with the chosen parameters.
pub fn select_and_fit(
    method: &dyn Method,
    x: &DMatrix<f64>,
    labels: &[usize],
    test: &DMatrix<f64>,
    folds: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let candidates = method.candidates(x, labels, seed)?;
    let chosen = match candidates.len() {
        0 => return Err(Error::param(format!("{} offers no hyperparameters", method.name()))),
        1 => candidates[0].clone(),
        _ => {
            let scores = cross_validate(x, labels, folds, seed ^ INNER_SEED_MIX, &candidates, |c, a, b, q| {
                method.fit_predict(c, a, b, q, seed)
            })?;
            let best = best_candidate(&scores)
                .ok_or_else(|| Error::degenerate(format!("every {} candidate failed", method.name())))?;
            candidates[best].clone()
        }
    };
    let pred = method.fit_predict(&chosen, x, labels, test, seed)?;
    Ok((chosen, pred))
}

/// Test accuracy of every method on every run, plus the scoring.
pub fn run_protocol(data: &Dataset, methods: &[&dyn Method], plan: &SplitPlan, threads: usize) -> Result<ScoreBoard> {
    if methods.is_empty() {
        return Err(Error::param("no methods to evaluate"));
    }
    if plan.runs == 0 {
        return Err(Error::param("at least one run required"));
    }
    let seeds = plan.run_seeds();
    let one_run = |run: usize| -> Result<Vec<Option<f64>>> {
        let seed = seeds[run];
        let folds = plan.folds_for(&data.labels, seed)?;
        let train_idx = complement(&folds, 0);
        let (xtr, xte) = normalize_split(
            &select_rows(&data.features, &train_idx),
            &select_rows(&data.features, &folds[0]),
        )?;
        let ytr: Vec<usize> = train_idx.iter().map(|&i| data.labels[i]).collect();
        let yte: Vec<usize> = folds[0].iter().map(|&i| data.labels[i]).collect();
        Ok(methods
            .iter()
            .map(|m| match select_and_fit(*m, &xtr, &ytr, &xte, plan.folds, seed) {
                Ok((params, pred)) => {
                    let acc = accuracy(&pred, &yte);
                    log::info!("run {run}: {} params {params:?} accuracy {acc:.4}", m.name());
                    Some(acc)
                }
                Err(e) => {
                    log::warn!("run {run}: {} failed: {e}", m.name());
                    None
                }
            })
            .collect())
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::param(format!("thread pool: {e}")))?;
    let per_run: Vec<Vec<Option<f64>>> =
        pool.install(|| (0..plan.runs).into_par_iter().map(one_run).collect::<Result<_>>())?;
    let samples = (0..methods.len())
        .map(|m| per_run.iter().map(|r| r[m]).collect())
        .collect();
    ScoreBoard::score(methods.iter().map(|m| m.name().to_string()).collect(), samples, 0.05)
}
