//! Binary soft-margin SVM solved in the dual with SMO-style two-coordinate
//! updates, and a one-vs-one multiclass wrapper.
//!
//! The bias is treated exactly: the dual carries the `yᵀα = 0` constraint,
//! and after the dual solve `b` is set to the exact minimizer of the primal
//! objective for the recovered `w`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub w: DVector<f64>,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    /// Stop once the maximal KKT violating pair gap drops below this.
    pub tol: f64,
    /// Cap on passes over the data (one pass = `n` pair updates).
    pub max_epochs: usize,
}

impl SvmConfig {
    pub fn with_c(c: f64) -> Self {
        SvmConfig {
            c,
            ..SvmConfig::default()
        }
    }
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            tol: 1e-9,
            max_epochs: 10_000,
        }
    }
}

/// Dual solution over a precomputed Gram matrix.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub iterations: usize,
    /// Final maximal violating pair gap.
    pub violation: f64,
}

const TAU: f64 = 1e-12;

/// Solves `min ½αᵀQα − Σα` s.t. `0 ≤ α ≤ C`, `yᵀα = 0` with
/// `Q_ij = y_i y_j K_ij`, using second-order working set selection.
pub fn solve_dual(gram: &DMatrix<f64>, y: &[f64], c: f64, tol: f64, max_epochs: usize) -> Result<DualSolution> {
    let n = y.len();
    if gram.shape() != (n, n) {
        return Err(Error::shape("Gram matrix does not match label count"));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::param(format!("C must be positive, got {c}")));
    }
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * gram[(i, j)]);
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = max_epochs.saturating_mul(n.max(1));
    let mut iterations = 0;
    let mut violation = f64::INFINITY;

    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    while iterations < max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j_sel = usize::MAX;
        let mut best_obj = f64::INFINITY;
        for t in 0..n {
            if in_low(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                gmin = gmin.min(v);
                if i_sel != usize::MAX {
                    let b = gmax - v;
                    if b > 0.0 {
                        let a = q[(i_sel, i_sel)] + q[(t, t)] - 2.0 * y[i_sel] * y[t] * q[(i_sel, t)];
                        let a = if a > 0.0 { a } else { TAU };
                        let obj = -(b * b) / a;
                        if obj < best_obj {
                            best_obj = obj;
                            j_sel = t;
                        }
                    }
                }
            }
        }
        violation = gmax - gmin;
        if i_sel == usize::MAX || j_sel == usize::MAX || violation < tol {
            if !violation.is_finite() {
                violation = 0.0;
            }
            break;
        }
        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = q[(i, i)] + q[(j, j)] + 2.0 * q[(i, j)];
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = q[(i, i)] + q[(j, j)] - 2.0 * q[(i, j)];
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        for t in 0..n {
            grad[t] += q[(t, i)] * di + q[(t, j)] * dj;
        }
        iterations += 1;
    }
    if iterations >= max_iter {
        log::warn!("SVM dual solver hit its iteration cap (violation {violation:e})");
    }
    Ok(DualSolution {
        alpha,
        iterations,
        violation,
    })
}

/// Exact minimizer over `b` of `C·Σ max(0, 1 − y_i(s_i + b))`.
///
/// The loss is convex and piecewise linear with kinks at `b = y_i − s_i`;
/// when the minimizing set is an interval its midpoint is returned.
pub fn optimal_bias(scores: &[f64], y: &[f64]) -> f64 {
    let loss = |b: f64| -> f64 {
        scores
            .iter()
            .zip(y)
            .map(|(s, yi)| (1.0 - yi * (s + b)).max(0.0))
            .sum()
    };
    let mut kinks: Vec<f64> = scores.iter().zip(y).map(|(s, yi)| yi - s).collect();
    kinks.sort_by(f64::total_cmp);
    kinks.dedup();
    let values: Vec<f64> = kinks.iter().map(|&b| loss(b)).collect();
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = 1e-12 * best.abs().max(1.0);
    let lo = kinks
        .iter()
        .zip(&values)
        .find(|(_, &v)| v <= best + slack)
        .map(|(&b, _)| b)
        .unwrap_or(0.0);
    let hi = kinks
        .iter()
        .zip(&values)
        .rev()
        .find(|(_, &v)| v <= best + slack)
        .map(|(&b, _)| b)
        .unwrap_or(0.0);
    0.5 * (lo + hi)
}

fn check_binary(y: &[f64]) -> Result<()> {
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::param("binary labels must be +1 or -1"));
    }
    let pos = y.iter().any(|&v| v > 0.0);
    let neg = y.iter().any(|&v| v < 0.0);
    if !(pos && neg) {
        return Err(Error::degenerate("SVM training needs both labels present"));
    }
    Ok(())
}

/// Trains a linear soft-margin SVM on the rows of `x`.
pub fn svm_train(x: &DMatrix<f64>, y: &[f64], config: &SvmConfig) -> Result<SvmModel> {
    if x.nrows() != y.len() {
        return Err(Error::shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    check_binary(y)?;
    let gram = x * x.transpose();
    let sol = solve_dual(&gram, y, config.c, config.tol, config.max_epochs)?;
    let coef = DVector::from_iterator(y.len(), sol.alpha.iter().zip(y).map(|(a, yi)| a * yi));
    let w = x.tr_mul(&coef);
    let scores = x * &w;
    let b = optimal_bias(scores.as_slice(), y);
    Ok(SvmModel { w, b, c: config.c })
}

impl SvmModel {
    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.w.len() {
            return Err(Error::shape(format!(
                "point has {} coordinates, model expects {}",
                x.len(),
                self.w.len()
            )));
        }
        Ok(self.w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b)
    }

    /// `½‖w‖² + C Σ max(0, 1 − y_i(wᵀx_i + b))`.
    pub fn primal_objective(&self, x: &DMatrix<f64>, y: &[f64]) -> f64 {
        let scores = x * &self.w;
        let hinge: f64 = scores
            .iter()
            .zip(y)
            .map(|(s, yi)| (1.0 - yi * (s + self.b)).max(0.0))
            .sum();
        0.5 * self.w.norm_squared() + self.c * hinge
    }
}

/// Sign of the margin; a zero margin resolves to `+1`.
pub fn svm_predict(model: &SvmModel, x: &[f64]) -> Result<(i8, f64)> {
    let m = model.margin(x)?;
    Ok((if m >= 0.0 { 1 } else { -1 }, m))
}

/// Anything producing a real-valued binary margin.
pub trait BinaryClassifier {
    fn margin(&self, x: &[f64]) -> Result<f64>;
}

impl BinaryClassifier for SvmModel {
    fn margin(&self, x: &[f64]) -> Result<f64> {
        SvmModel::margin(self, x)
    }
}

/// One binary model per class pair `(a, b)` with `a < b`; `a` is the
/// positive side.
#[derive(Debug, Clone, PartialEq)]
pub struct OvoBank<M> {
    pub num_classes: usize,
    pub members: Vec<((usize, usize), M)>,
}

/// Trains one binary model per class pair. `train` receives the pair's rows
/// and `±1` labels (`+1` for the lower class id).
pub fn ovo_train<M, F>(x: &DMatrix<f64>, labels: &[usize], num_classes: usize, mut train: F) -> Result<OvoBank<M>>
where
    F: FnMut((usize, usize), &DMatrix<f64>, &[f64]) -> Result<M>,
{
    if labels.len() != x.nrows() {
        return Err(Error::shape(format!("{} rows but {} labels", x.nrows(), labels.len())));
    }
    if num_classes < 2 {
        return Err(Error::param("one-vs-one needs at least two classes"));
    }
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(Error::param(format!("label {l} out of range for {num_classes} classes")));
        }
        counts[l] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::param(format!("class {missing} has no training samples")));
    }
    let mut members = Vec::with_capacity(num_classes * (num_classes - 1) / 2);
    for a in 0..num_classes {
        for b in a + 1..num_classes {
            let rows: Vec<usize> = (0..labels.len())
                .filter(|&i| labels[i] == a || labels[i] == b)
                .collect();
            let sub = crate::data::select_rows(x, &rows);
            let y: Vec<f64> = rows
                .iter()
                .map(|&i| if labels[i] == a { 1.0 } else { -1.0 })
                .collect();
            members.push(((a, b), train((a, b), &sub, &y)?));
        }
    }
    Ok(OvoBank {
        num_classes,
        members,
    })
}

/// Majority vote; ties go to the lowest class id.
pub fn ovo_predict<M: BinaryClassifier>(bank: &OvoBank<M>, x: &[f64]) -> Result<usize> {
    let mut votes = vec![0usize; bank.num_classes];
    for ((a, b), model) in &bank.members {
        if model.margin(x)? >= 0.0 {
            votes[*a] += 1;
        } else {
            votes[*b] += 1;
        }
    }
    Ok(argmax_lowest(&votes))
}

pub(crate) fn argmax_lowest(votes: &[usize]) -> usize {
    let mut best = 0;
    for (c, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = c;
        }
    }
    best
}

/// `Σα − ½αᵀQα` for a dual point.
pub fn dual_objective(gram: &DMatrix<f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let coef = DVector::from_iterator(y.len(), alpha.iter().zip(y).map(|(a, yi)| a * yi));
    alpha.iter().sum::<f64>() - 0.5 * coef.dot(&(gram * &coef))
}
