//! Central finite-difference checks of the two transform objectives against
//! values computed point by point through `TpsTransform::apply`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use tpsml::metric::{build_pairs, tml_nn_objective, PairCaps, PairSets};
use tpsml::svm::SvmModel;
use tpsml::tml_svm::tml_svm_subproblem_objective;
use tpsml::tps::{
    build_side_basis, select_anchors, AnchorMethod, AnchorSet, KernelSpec, SideConditionMode, TpsTransform,
    TransformParameterization,
};

use super::{rel_err, rng, row, uniform_matrix};

const STEP: f64 = 1e-6;

pub struct Instance {
    pub x: DMatrix<f64>,
    pub anchors: AnchorSet,
    pub kernel: KernelSpec,
    pub param: TransformParameterization,
    pub u: Vec<f64>,
}

/// Random `n ≤ 10`, `d ≤ 3`, `p = 3` instance with a random transform in
/// the side-condition subspace.
pub fn instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let n = r.gen_range(4..=10);
    let d = r.gen_range(1..=3);
    let x = uniform_matrix(&mut r, n, d, -1.0, 1.0);
    let anchors = select_anchors(&x, 3, AnchorMethod::Random, seed).unwrap();
    let kernel = KernelSpec::default_for_dim(d);
    let basis = build_side_basis(&anchors, SideConditionMode::PerDimension).unwrap();
    let start = TpsTransform::identity(anchors.clone(), kernel);
    let param = TransformParameterization::new(basis, &start, false, false);
    let u: Vec<f64> = (0..param.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
    Instance {
        x,
        anchors,
        kernel,
        param,
        u,
    }
}

impl Instance {
    pub fn transform(&self, u: &[f64]) -> TpsTransform {
        let (l, psi) = self.param.unpack(u);
        TpsTransform::new(l, psi, self.anchors.clone(), self.kernel).unwrap()
    }

    fn mapped_rows(&self, t: &TpsTransform) -> Vec<DVector<f64>> {
        (0..self.x.nrows()).map(|i| t.apply(&row(&self.x, i)).unwrap()).collect()
    }
}

fn central<F: Fn(&[f64]) -> f64>(u: &[f64], f: F) -> Vec<f64> {
    (0..u.len())
        .map(|i| {
            let mut a = u.to_vec();
            let mut b = u.to_vec();
            a[i] += STEP;
            b[i] -= STEP;
            (f(&a) - f(&b)) / (2.0 * STEP)
        })
        .collect()
}

fn nn_reference(inst: &Instance, pairs: &PairSets, lambda: f64, u: &[f64]) -> f64 {
    let t = inst.transform(u);
    let f = inst.mapped_rows(&t);
    let fit: f64 = pairs.similar.iter().map(|&(i, j)| (&f[i] - &f[j]).norm_squared()).sum();
    fit + lambda * t.psi.norm_squared()
}

/// Largest relative error (value, gradient) of the kNN objective.
pub fn tml_nn_case(seed: u64) -> (f64, f64) {
    let inst = instance(seed);
    let n = inst.x.nrows();
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let pairs = build_pairs(&labels, PairCaps::default(), seed).unwrap();
    let lambda = 0.1 + (seed % 7) as f64 * 0.3;
    let t = inst.transform(&inst.u);
    let (value, grad) = tml_nn_objective(&t, &inst.x, &pairs, lambda, &inst.param).unwrap();
    let reference = nn_reference(&inst, &pairs, lambda, &inst.u);
    let fd = central(&inst.u, |v| nn_reference(&inst, &pairs, lambda, v));
    (
        (value - reference).abs() / reference.abs().max(1e-12),
        rel_err(&grad, &fd, 1e-8),
    )
}

pub struct SvmCase {
    pub value: f64,
    pub linear: f64,
    pub psi_full: f64,
    pub psi_free: f64,
}

impl SvmCase {
    pub fn worst(&self) -> f64 {
        self.value.max(self.linear).max(self.psi_full).max(self.psi_free)
    }
}

fn svm_reference(x: &DMatrix<f64>, t: &TpsTransform, y: &[f64], svm: &SvmModel, c2: f64) -> f64 {
    let mut loss = 0.0;
    for (i, yi) in y.iter().enumerate() {
        let f = t.apply(&row(x, i)).unwrap();
        let h = (1.0 - yi * (svm.w.dot(&f) + svm.b)).max(0.0);
        loss += h * h;
    }
    svm.c * loss + c2 * t.psi.norm_squared()
}

/// Relative errors of the squared-hinge subproblem's value and of the
/// gradients with respect to `L`, the full `Ψ`, and the free coordinates.
pub fn tml_svm_case(seed: u64) -> SvmCase {
    let inst = instance(seed);
    let mut r = rng(seed ^ 0x5eed);
    let n = inst.x.nrows();
    let d = inst.x.ncols();
    let y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let svm = SvmModel {
        w: DVector::from_fn(d, |_, _| r.gen_range(-1.5..1.5)),
        b: r.gen_range(-0.5..0.5),
        c: r.gen_range(0.5..5.0),
    };
    let c2 = r.gen_range(0.01..2.0);
    let t = inst.transform(&inst.u);
    let eval = tml_svm_subproblem_objective(&t, &inst.x, &y, &svm, c2, SideConditionMode::PerDimension).unwrap();
    let reference = svm_reference(&inst.x, &t, &y, &svm, c2);

    // L entries directly.
    let l0: Vec<f64> = t.linear.transpose().iter().copied().collect();
    let fd_l = central(&l0, |v| {
        let mut tt = t.clone();
        tt.linear = DMatrix::from_row_slice(d, d, v);
        svm_reference(&inst.x, &tt, &y, &svm, c2)
    });
    let grad_l: Vec<f64> = eval.grad_linear.transpose().iter().copied().collect();

    // Every Ψ entry, ignoring the side conditions.
    let p = t.psi.ncols();
    let psi0: Vec<f64> = t.psi.transpose().iter().copied().collect();
    let fd_psi = central(&psi0, |v| {
        let mut tt = t.clone();
        tt.psi = DMatrix::from_row_slice(d, p, v);
        svm_reference(&inst.x, &tt, &y, &svm, c2)
    });
    let grad_psi: Vec<f64> = eval.grad_psi.transpose().iter().copied().collect();

    // Free side-condition coordinates, through the parameterization.
    let free0 = &inst.u[d * d..];
    let fd_free = central(free0, |v| {
        let mut u = inst.u.clone();
        u[d * d..].copy_from_slice(v);
        svm_reference(&inst.x, &inst.transform(&u), &y, &svm, c2)
    });

    SvmCase {
        value: (eval.value - reference).abs() / reference.abs().max(1e-12),
        linear: rel_err(&grad_l, &fd_l, 1e-8),
        psi_full: rel_err(&grad_psi, &fd_psi, 1e-8),
        psi_free: rel_err(&eval.grad_psi_free, &fd_free, 1e-8),
    }
}
