#![allow(dead_code)]

pub mod fd;
pub mod oracles;
pub mod qp;

use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tpsml::persist::read_dataset;
use tpsml::Dataset;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn bundled(name: &str) -> Dataset {
    read_dataset(&data_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.gen_range(lo..hi))
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

/// Leave-one-out 1NN accuracy by scanning every pair; ties go to the lower
/// index.
pub fn loo_1nn_oracle(x: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let n = x.nrows();
    let mut correct = 0;
    for i in 0..n {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..n {
            if j != i {
                let d = sq_dist(&row(x, i), &row(x, j));
                if d < best.0 {
                    best = (d, j);
                }
            }
        }
        if labels[best.1] == labels[i] {
            correct += 1;
        }
    }
    correct as f64 / n as f64
}

/// Mean distance over different-class pairs divided by the mean over
/// same-class pairs.
pub fn inter_intra_ratio(x: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let (mut inter, mut ni, mut intra, mut na) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..x.nrows() {
        for j in i + 1..x.nrows() {
            let d = sq_dist(&row(x, i), &row(x, j)).sqrt();
            if labels[i] == labels[j] {
                intra += d;
                na += 1;
            } else {
                inter += d;
                ni += 1;
            }
        }
    }
    (inter / ni as f64) / (intra / na as f64)
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}
