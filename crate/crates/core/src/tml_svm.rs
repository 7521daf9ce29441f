//! Alternating optimization of a TPS transform and a linear SVM under the
//! unit-enclosing-ball constraint, plus its one-vs-one multiclass form.
//!
//! Each outer iteration first updates `(L, Ψ)` with `(w, b)` fixed, on the
//! squared-hinge surrogate with `‖f(x_i)‖² ≤ 1` for every training row, then
//! refits `(w, b)` with the transform fixed. Both half-steps are guarded on
//! the true outer objective
//! `J = ½‖w‖² + C₁ Σ max(0, 1 − y_i(wᵀf(x_i) + b)) + C₂‖Ψ‖²_F`,
//! so the recorded trace never increases.

use std::cell::RefCell;
use std::rc::Rc;

use nalgebra::{DMatrix, DVector};

use crate::data::select_rows;
use crate::error::{Error, Result};
use crate::metric::anchor_count;
use crate::optim::{minimize, OptConfig, Problem};
use crate::svm::{ovo_predict, ovo_train, svm_train, BinaryClassifier, OvoBank, SvmConfig, SvmModel};
use crate::tps::{
    build_side_basis, distinct_rows, kernel_matrix, select_anchors, AnchorMethod, KernelSpec, SideConditionMode,
    TpsTransform, TransformParameterization,
};

/// `x' = (x − mean)·scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteringInfo {
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl CenteringInfo {
    pub fn apply_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::shape(format!(
                "point has {} coordinates, expected {}",
                x.len(),
                self.mean.len()
            )));
        }
        Ok(x.iter().zip(&self.mean).map(|(v, m)| (v - m) * self.scale).collect())
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::shape(format!(
                "data has {} columns, expected {}",
                x.ncols(),
                self.mean.len()
            )));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) * self.scale))
    }
}

/// Centers the rows and scales them so the largest row norm is 1.
///
/// A single row is centered to the origin with scale 1.
pub fn center_and_scale(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, CenteringInfo)> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::param("cannot center zero rows"));
    }
    let mean: Vec<f64> = x.column_iter().map(|c| c.sum() / n as f64).collect();
    let unscaled = CenteringInfo {
        mean: mean.clone(),
        scale: 1.0,
    };
    let centered = unscaled.apply(x)?;
    let max_norm = centered.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    if max_norm == 0.0 {
        if n == 1 {
            return Ok((centered, unscaled));
        }
        return Err(Error::degenerate("all rows coincide after centering"));
    }
    let info = CenteringInfo {
        mean,
        scale: 1.0 / max_norm,
    };
    Ok((centered / max_norm, info))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TmlSvmConfig {
    pub c1: f64,
    pub c2: f64,
    pub anchor_fraction: f64,
    pub anchor_method: AnchorMethod,
    /// `None` picks the default for the input dimension.
    pub kernel: Option<KernelSpec>,
    pub side_conditions: SideConditionMode,
    pub max_outer: usize,
    /// Relative change of the outer objective that ends training.
    pub outer_tol: f64,
    /// Accepted optimizer steps per transform update.
    pub inner_steps: usize,
    pub seed: u64,
    pub freeze_linear: bool,
    pub freeze_psi: bool,
}

impl Default for TmlSvmConfig {
    fn default() -> Self {
        TmlSvmConfig {
            c1: 1.0,
            c2: 1.0,
            anchor_fraction: 0.3,
            anchor_method: AnchorMethod::KMedoids,
            kernel: None,
            side_conditions: SideConditionMode::PerDimension,
            max_outer: 20,
            outer_tol: 1e-4,
            inner_steps: 50,
            seed: 0,
            freeze_linear: false,
            freeze_psi: false,
        }
    }
}

impl TmlSvmConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [("C1", self.c1), ("C2", self.c2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.anchor_fraction > 0.0) {
            return Err(Error::param("anchor fraction must be positive"));
        }
        Ok(())
    }
}

/// Value and gradients of the squared-hinge transform subproblem.
#[derive(Debug, Clone)]
pub struct SubproblemEval {
    pub value: f64,
    /// `∂J/∂L`, `d × d`.
    pub grad_linear: DMatrix<f64>,
    /// `∂J/∂Ψ` with respect to the full `d × p` matrix.
    pub grad_psi: DMatrix<f64>,
    /// `∂J/∂Ψ` in the free side-condition coordinates, row by row.
    pub grad_psi_free: Vec<f64>,
}

/// `−2C₁·h_i·y_i` for each row, with `h_i = max(0, 1 − y_i(wᵀF_i + b))`.
fn hinge_weights(f: &DMatrix<f64>, y: &[f64], w: &DVector<f64>, b: f64, c1: f64) -> (f64, DVector<f64>) {
    let scores = f * w;
    let mut loss = 0.0;
    let v = DVector::from_iterator(
        y.len(),
        scores.iter().zip(y).map(|(s, yi)| {
            let h = (1.0 - yi * (s + b)).max(0.0);
            loss += h * h;
            -2.0 * c1 * h * yi
        }),
    );
    (c1 * loss, v)
}

/// `C₁ Σ max(0, 1 − y_i(wᵀf(x_i) + b))² + C₂‖Ψ‖²_F` with its gradients.
/// `C₁` is taken from `svm`.
pub fn tml_svm_subproblem_objective(
    t: &TpsTransform,
    x: &DMatrix<f64>,
    y: &[f64],
    svm: &SvmModel,
    c2: f64,
    mode: SideConditionMode,
) -> Result<SubproblemEval> {
    if x.ncols() != t.dim() || svm.w.len() != t.dim() {
        return Err(Error::shape("data, transform and SVM dimensions differ"));
    }
    if y.len() != x.nrows() {
        return Err(Error::shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    let g = kernel_matrix(x, &t.anchors, t.kernel)?;
    let f = t.apply_with_kernel(x, &g);
    let (loss, v) = hinge_weights(&f, y, &svm.w, svm.b, svm.c);
    let grad_linear = &svm.w * (v.transpose() * x);
    let grad_psi = &svm.w * (v.transpose() * &g) + &t.psi * (2.0 * c2);
    let basis = build_side_basis(&t.anchors, mode)?;
    let mut grad_psi_free = Vec::with_capacity(basis.free_dim());
    for (k, bk) in basis.bases.iter().enumerate() {
        grad_psi_free.extend(bk.tr_mul(&grad_psi.row(k).transpose()).iter());
    }
    Ok(SubproblemEval {
        value: loss + c2 * t.psi.norm_squared(),
        grad_linear,
        grad_psi,
        grad_psi_free,
    })
}

/// The transform subproblem over flat coordinates, with one unit-ball
/// inequality `‖f(x_i)‖² − 1 ≤ 0` per training row.
pub struct TmlSvmProblem<'a> {
    pub x: &'a DMatrix<f64>,
    /// Kernel matrix between `x` and the anchors (`n × p`).
    pub kernel: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub svm: &'a SvmModel,
    pub c2: f64,
    pub param: TransformParameterization,
    /// Last evaluated point with its `(Ψ, F)`.
    cache: RefCell<Option<(Vec<f64>, Rc<(DMatrix<f64>, DMatrix<f64>)>)>>,
}

impl<'a> TmlSvmProblem<'a> {
    pub fn new(
        x: &'a DMatrix<f64>,
        kernel: &'a DMatrix<f64>,
        y: &'a [f64],
        svm: &'a SvmModel,
        c2: f64,
        param: TransformParameterization,
    ) -> Self {
        TmlSvmProblem {
            x,
            kernel,
            y,
            svm,
            c2,
            param,
            cache: RefCell::new(None),
        }
    }

    fn mapped(&self, u: &[f64]) -> Rc<(DMatrix<f64>, DMatrix<f64>)> {
        if let Some((key, value)) = self.cache.borrow().as_ref() {
            if key.as_slice() == u {
                return Rc::clone(value);
            }
        }
        let (l, psi) = self.param.unpack(u);
        let f = self.x * l.transpose() + self.kernel * psi.transpose();
        let value = Rc::new((psi, f));
        *self.cache.borrow_mut() = Some((u.to_vec(), Rc::clone(&value)));
        value
    }

    /// Pulls `∂J/∂F` back to flat coordinates, adding `psi_extra` to the
    /// Ψ block.
    fn pull(&self, grad_f: &DMatrix<f64>, psi_extra: Option<DMatrix<f64>>, out: &mut [f64]) {
        let gft = grad_f.transpose();
        let gl = &gft * self.x;
        let mut gp = &gft * self.kernel;
        if let Some(extra) = psi_extra {
            gp += extra;
        }
        self.param.pullback(&gl, &gp, out);
    }

    /// `∂/∂F` of the squared hinge (`v·wᵀ`) plus `diag(2·weights)·F` for
    /// the ball constraints.
    fn grad_f(&self, f: &DMatrix<f64>, v: Option<&DVector<f64>>, weights: Option<&[f64]>) -> DMatrix<f64> {
        let mut gf = match v {
            Some(v) => v * self.svm.w.transpose(),
            None => DMatrix::zeros(f.nrows(), f.ncols()),
        };
        if let Some(w) = weights {
            for (i, &wi) in w.iter().enumerate() {
                if wi != 0.0 {
                    for j in 0..f.ncols() {
                        gf[(i, j)] += 2.0 * wi * f[(i, j)];
                    }
                }
            }
        }
        gf
    }
}

impl<'a> Problem for TmlSvmProblem<'a> {
    fn dim(&self) -> usize {
        self.param.len()
    }

    fn objective(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let m = self.mapped(u);
        let (psi, f) = (&m.0, &m.1);
        let (loss, v) = hinge_weights(f, self.y, &self.svm.w, self.svm.b, self.svm.c);
        let gf = self.grad_f(f, Some(&v), None);
        self.pull(&gf, Some(psi * (2.0 * self.c2)), grad);
        loss + self.c2 * psi.norm_squared()
    }

    fn objective_with_vjp(&self, u: &[f64], weights: &[f64], grad: &mut [f64]) -> f64 {
        let m = self.mapped(u);
        let (psi, f) = (&m.0, &m.1);
        let (loss, v) = hinge_weights(f, self.y, &self.svm.w, self.svm.b, self.svm.c);
        let gf = self.grad_f(f, Some(&v), Some(weights));
        self.pull(&gf, Some(psi * (2.0 * self.c2)), grad);
        loss + self.c2 * psi.norm_squared()
    }

    fn num_constraints(&self) -> usize {
        self.x.nrows()
    }

    fn constraints(&self, u: &[f64], out: &mut [f64]) {
        let m = self.mapped(u);
        for (o, r) in out.iter_mut().zip(m.1.row_iter()) {
            *o = r.norm_squared() - 1.0;
        }
    }

    fn constraint_vjp(&self, u: &[f64], weights: &[f64], grad: &mut [f64]) {
        let m = self.mapped(u);
        let gf = self.grad_f(&m.1, None, Some(weights));
        let mut g = vec![0.0; grad.len()];
        self.pull(&gf, None, &mut g);
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
}

/// `½‖w‖² + C₁ Σ max(0, 1 − y_i(wᵀf_i + b)) + C₂‖Ψ‖²_F` for mapped rows `f`.
pub fn outer_objective(svm: &SvmModel, f: &DMatrix<f64>, y: &[f64], psi: &DMatrix<f64>, c2: f64) -> f64 {
    svm.primal_objective(f, y) + c2 * psi.norm_squared()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TmlSvmReport {
    pub outer_iterations: usize,
    /// Outer objective after initialization and after each outer iteration.
    pub objective_trace: Vec<f64>,
    /// Transform updates that lowered the outer objective.
    pub accepted_transform_steps: usize,
    pub converged: bool,
}

/// One binary TML-SVM: `+1` is the positive side of `svm`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryTmlSvm {
    pub centering: CenteringInfo,
    pub transform: TpsTransform,
    pub svm: SvmModel,
    pub report: TmlSvmReport,
}

impl BinaryTmlSvm {
    /// Transformed image of a raw input point.
    pub fn map(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.transform.apply(&self.centering.apply_row(x)?)
    }

    /// Transformed images of raw input rows.
    pub fn map_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.transform.apply_batch(&self.centering.apply(x)?)
    }
}

impl BinaryClassifier for BinaryTmlSvm {
    fn margin(&self, x: &[f64]) -> Result<f64> {
        let f = self.map(x)?;
        self.svm.margin(f.as_slice())
    }
}

fn train_svm(f: &DMatrix<f64>, y: &[f64], c1: f64) -> Result<SvmModel> {
    svm_train(f, y, &SvmConfig::with_c(c1))
}

/// Trains a binary TML-SVM on raw rows `x` with labels in `{−1, +1}`.
pub fn tml_svm_train_binary(x: &DMatrix<f64>, y: &[f64], config: &TmlSvmConfig) -> Result<BinaryTmlSvm> {
    config.validate()?;
    if y.len() != x.nrows() {
        return Err(Error::shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    let (xc, centering) = center_and_scale(x)?;
    let n = xc.nrows();
    let distinct = distinct_rows(&xc).len();
    if distinct < 3 {
        return Err(Error::degenerate("TML-SVM needs at least three distinct samples"));
    }
    let p = anchor_count(n, config.anchor_fraction, distinct);
    let anchors = select_anchors(&xc, p, config.anchor_method, config.seed)?;
    let kernel = config.kernel.unwrap_or_else(|| KernelSpec::default_for_dim(xc.ncols()));
    let basis = build_side_basis(&anchors, config.side_conditions)?;
    let g = kernel_matrix(&xc, &anchors, kernel)?;

    let mut transform = TpsTransform::identity(anchors, kernel);
    let mut f = transform.apply_with_kernel(&xc, &g);
    let mut svm = train_svm(&f, y, config.c1)?;
    let mut current = outer_objective(&svm, &f, y, &transform.psi, config.c2);
    let mut trace = vec![current];
    let mut accepted = 0;
    let mut converged = false;
    let mut outer = 0;

    let opt = OptConfig {
        max_total_steps: Some(config.inner_steps),
        max_inner: config.inner_steps,
        initial_penalty: config.c1.max(1.0),
        ..OptConfig::default()
    };

    while outer < config.max_outer {
        outer += 1;
        let before = current;

        let param = TransformParameterization::new(basis.clone(), &transform, config.freeze_linear, config.freeze_psi);
        if !param.is_empty() {
            let problem = TmlSvmProblem::new(&xc, &g, y, &svm, config.c2, param);
            let u0 = problem.param.pack(&transform.linear, &transform.psi);
            let (u, _) = minimize(&problem, &u0, &opt)?;
            let (l, psi) = problem.param.unpack(&u);
            let mut candidate = TpsTransform::new(l, psi, transform.anchors.clone(), kernel)?;
            let reach = candidate
                .apply_with_kernel(&xc, &g)
                .row_iter()
                .map(|r| r.norm_squared())
                .fold(0.0, f64::max);
            if !reach.is_finite() {
                return Err(Error::Divergence("transform update produced non-finite values".into()));
            }
            if reach > 1.0 {
                candidate.scale(1.0 / reach.sqrt());
            }
            // Convex combinations of two feasible transforms stay feasible.
            let mut step = 1.0;
            for _ in 0..12 {
                let trial = TpsTransform {
                    linear: &transform.linear + (&candidate.linear - &transform.linear) * step,
                    psi: &transform.psi + (&candidate.psi - &transform.psi) * step,
                    anchors: transform.anchors.clone(),
                    kernel,
                };
                let ft = trial.apply_with_kernel(&xc, &g);
                let value = outer_objective(&svm, &ft, y, &trial.psi, config.c2);
                if value <= current {
                    transform = trial;
                    f = ft;
                    current = value;
                    accepted += 1;
                    break;
                }
                step *= 0.5;
            }
        }

        let refit = train_svm(&f, y, config.c1)?;
        let value = outer_objective(&refit, &f, y, &transform.psi, config.c2);
        if value <= current {
            svm = refit;
            current = value;
        }
        trace.push(current);
        if (before - current).abs() <= config.outer_tol * before.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    Ok(BinaryTmlSvm {
        centering,
        transform,
        svm,
        report: TmlSvmReport {
            outer_iterations: outer,
            objective_trace: trace,
            accepted_transform_steps: accepted,
            converged,
        },
    })
}

/// One binary TML-SVM per class pair, each with its own centering and
/// transform.
#[derive(Debug, Clone, PartialEq)]
pub struct TmlSvmModel {
    pub bank: OvoBank<BinaryTmlSvm>,
    pub side_conditions: SideConditionMode,
}

pub fn tml_svm_train(x: &DMatrix<f64>, labels: &[usize], config: &TmlSvmConfig) -> Result<TmlSvmModel> {
    config.validate()?;
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut present = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::degenerate("TML-SVM needs at least two classes"));
    }
    let bank = ovo_train(x, labels, num_classes, |_, sx, sy| tml_svm_train_binary(sx, sy, config))?;
    Ok(TmlSvmModel {
        bank,
        side_conditions: config.side_conditions,
    })
}

pub fn tml_svm_predict(model: &TmlSvmModel, x: &[f64]) -> Result<usize> {
    ovo_predict(&model.bank, x)
}

impl TmlSvmModel {
    pub fn predict_batch(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        (0..x.nrows())
            .map(|i| tml_svm_predict(self, x.row(i).transpose().as_slice()))
            .collect()
    }

    /// Largest `‖f(x'_i)‖²` over each member's own training rows.
    pub fn max_training_reach(&self, x: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for ((a, b), m) in &self.bank.members {
            let rows: Vec<usize> = (0..labels.len())
                .filter(|&i| labels[i] == *a || labels[i] == *b)
                .collect();
            let f = m.map_batch(&select_rows(x, &rows))?;
            for r in f.row_iter() {
                worst = worst.max(r.norm_squared());
            }
        }
        Ok(worst)
    }
}
