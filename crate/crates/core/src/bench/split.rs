use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub runs: usize,
    pub folds: usize,
    pub master_seed: u64,
    pub stratified: bool,
}

impl SplitPlan {
    pub fn new(runs: usize, master_seed: u64) -> Self {
        SplitPlan {
            runs,
            folds: 3,
            master_seed,
            stratified: true,
        }
    }

    /// Independent seeds, one per run.
    pub fn run_seeds(&self) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        (0..self.runs).map(|_| rng.next_u64()).collect()
    }

    pub fn folds_for(&self, labels: &[usize], run_seed: u64) -> Result<Vec<Vec<usize>>> {
        if self.stratified {
            stratified_folds(labels, self.folds, run_seed)
        } else {
            random_folds(labels.len(), self.folds, run_seed)
        }
    }
}

fn check(n: usize, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::param("need at least two folds"));
    }
    if n < k {
        return Err(Error::param(format!("{n} samples cannot fill {k} folds")));
    }
    Ok(())
}

/// Shuffles each class and deals its members round-robin into `k` folds,
/// continuing from where the previous class stopped. Fold contents are
/// sorted.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    check(labels.len(), k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

pub fn random_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    check(n, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// All indices outside fold `held_out`, ascending.
pub fn complement(folds: &[Vec<usize>], held_out: usize) -> Vec<usize> {
    let mut rest: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(f, _)| *f != held_out)
        .flat_map(|(_, v)| v.iter().copied())
        .collect();
    rest.sort_unstable();
    rest
}
