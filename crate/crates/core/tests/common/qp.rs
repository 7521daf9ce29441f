//! Dense primal-dual interior-point solver (Mehrotra predictor-corrector)
//! for `min ½zᵀHz + cᵀz` s.t. `Gz ≤ h`, used as an SVM oracle.

use nalgebra::{DMatrix, DVector};

pub struct QpSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// `sᵀλ` and the residual norms at exit.
    pub complementarity: f64,
    pub residual: f64,
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a: f64 = 1.0;
    for (x, d) in v.iter().zip(dv.iter()) {
        if *d < 0.0 {
            a = a.min(-x / d);
        }
    }
    a
}

pub fn solve(h_mat: &DMatrix<f64>, c: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>) -> QpSolution {
    let n = c.len();
    let m = h.len();
    let mut z = DVector::zeros(n);
    let mut s = DVector::from_element(m, 1.0);
    let mut lam = DVector::from_element(m, 1.0);
    let scale = 1.0 + h.amax() + c.amax();
    let mut it = 0;
    while it < 200 {
        it += 1;
        let r_d = h_mat * &z + c + g.transpose() * &lam;
        let r_p = g * &z + &s - h;
        let mu = s.dot(&lam) / m as f64;
        if r_d.amax() < 1e-12 * scale && r_p.amax() < 1e-12 * scale && mu < 1e-14 * scale {
            break;
        }
        let w = lam.component_div(&s);
        let mut kkt = h_mat + g.transpose() * DMatrix::from_diagonal(&w) * g;
        for i in 0..n {
            kkt[(i, i)] += 1e-14;
        }
        // Near convergence the scaling `w` spans many decades; the current
        // iterate is then already accurate.
        let Some(chol) = kkt.cholesky() else { break };
        let direction = |r_c: &DVector<f64>| {
            let rhs = -&r_d - g.transpose() * (w.component_mul(&r_p) - r_c.component_div(&s));
            let dz = chol.solve(&rhs);
            let dlam = w.component_mul(&(g * &dz + &r_p)) - r_c.component_div(&s);
            let ds = -(r_c + s.component_mul(&dlam)).component_div(&lam);
            (dz, ds, dlam)
        };
        // Predictor.
        let r_c = s.component_mul(&lam);
        let (_, ds_a, dl_a) = direction(&r_c);
        let a_aff = max_step(&s, &ds_a).min(max_step(&lam, &dl_a));
        let mu_aff = (&s + &ds_a * a_aff).dot(&(&lam + &dl_a * a_aff)) / m as f64;
        let sigma = (mu_aff / mu).powi(3);
        // Corrector.
        let r_c = s.component_mul(&lam) + ds_a.component_mul(&dl_a) - DVector::from_element(m, sigma * mu);
        let (dz, ds, dl) = direction(&r_c);
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);
        z += &dz * alpha;
        s += &ds * alpha;
        lam += &dl * alpha;
    }
    let objective = 0.5 * z.dot(&(h_mat * &z)) + c.dot(&z);
    let r_d = h_mat * &z + c + g.transpose() * &lam;
    let r_p = g * &z + &s - h;
    QpSolution {
        z,
        objective,
        iterations: it,
        complementarity: s.dot(&lam),
        residual: r_d.amax().max(r_p.amax()),
    }
}

/// Soft-margin linear SVM primal over `(w, b, ξ)`; returns `(w, b)`.
pub fn svm_primal(x: &DMatrix<f64>, y: &[f64], c: f64) -> (DVector<f64>, f64) {
    let (n, d) = x.shape();
    let nv = d + 1 + n;
    let mut h_mat = DMatrix::zeros(nv, nv);
    for i in 0..d {
        h_mat[(i, i)] = 1.0;
    }
    let mut cv = DVector::zeros(nv);
    for i in 0..n {
        cv[d + 1 + i] = c;
    }
    let mut g = DMatrix::zeros(2 * n, nv);
    let mut h = DVector::zeros(2 * n);
    for i in 0..n {
        for k in 0..d {
            g[(i, k)] = -y[i] * x[(i, k)];
        }
        g[(i, d)] = -y[i];
        g[(i, d + 1 + i)] = -1.0;
        h[i] = -1.0;
        g[(n + i, d + 1 + i)] = -1.0;
    }
    let sol = solve(&h_mat, &cv, &g, &h);
    let tol = 1e-7 * (1.0 + sol.objective.abs());
    assert!(
        sol.complementarity < tol && sol.residual < tol,
        "oracle did not converge: gap {:e}, residual {:e}",
        sol.complementarity,
        sol.residual
    );
    (sol.z.rows(0, d).into_owned(), sol.z[d])
}

/// `½‖w‖² + C Σ max(0, 1 − y_i(wᵀx_i + b))`, computed directly.
pub fn svm_objective(x: &DMatrix<f64>, y: &[f64], c: f64, w: &DVector<f64>, b: f64) -> f64 {
    let hinge: f64 = (0..x.nrows())
        .map(|i| (1.0 - y[i] * (x.row(i).transpose().dot(w) + b)).max(0.0))
        .sum();
    0.5 * w.norm_squared() + c * hinge
}

pub struct SvmInstance {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub c: f64,
}

/// `n ≤ 12`, `d ≤ 3`, both labels present, `C` log-uniform in `[0.01, 100]`.
pub fn random_instance(seed: u64) -> SvmInstance {
    use rand::Rng;
    let mut r = super::rng(seed);
    let n = r.gen_range(2..=12);
    let d = r.gen_range(1..=3);
    let shift = r.gen_range(0.0..2.0);
    let mut y: Vec<f64> = (0..n).map(|_| if r.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    y[0] = 1.0;
    y[n - 1] = -1.0;
    let x = DMatrix::from_fn(n, d, |i, _| r.gen_range(-1.0..1.0) + shift * y[i]);
    let c = 10f64.powf(r.gen_range(-2.0..2.0));
    SvmInstance { x, y, c }
}
