//! Gradient-based minimization with inequality constraints.
//!
//! Equality constraints never reach this module: callers eliminate them with
//! a fixed linear reparameterization (see [`Reparameterized`]). Inequalities
//! `g_j(x) <= 0` are handled with an augmented Lagrangian whose inner
//! problems are solved by L-BFGS with a backtracking Armijo line search.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A smooth objective with optional inequality constraints `g(x) <= 0`.
pub trait Problem {
    fn dim(&self) -> usize;

    /// Returns `f(x)` and writes `∇f(x)` into `grad`.
    fn objective(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn num_constraints(&self) -> usize {
        0
    }

    fn constraints(&self, _x: &[f64], _out: &mut [f64]) {}

    /// Adds `Σ_j weights[j]·∇g_j(x)` to `grad`.
    fn constraint_vjp(&self, _x: &[f64], _weights: &[f64], _grad: &mut [f64]) {}

    /// Returns `f(x)` and writes `∇f(x) + Σ_j weights[j]·∇g_j(x)` into `grad`.
    fn objective_with_vjp(&self, x: &[f64], weights: &[f64], grad: &mut [f64]) -> f64 {
        let f = self.objective(x, grad);
        self.constraint_vjp(x, weights, grad);
        f
    }
}

/// Wraps a problem over `θ` as a problem over `u` with `θ = θ₀ + Z·u`.
pub struct Reparameterized<'a, P: Problem> {
    pub inner: &'a P,
    pub offset: DVector<f64>,
    pub basis: DMatrix<f64>,
}

impl<'a, P: Problem> Reparameterized<'a, P> {
    pub fn new(inner: &'a P, offset: DVector<f64>, basis: DMatrix<f64>) -> Result<Self> {
        if offset.len() != inner.dim() || basis.nrows() != inner.dim() {
            return Err(Error::shape("reparameterization does not match problem size"));
        }
        Ok(Reparameterized {
            inner,
            offset,
            basis,
        })
    }

    pub fn lift(&self, u: &[f64]) -> Vec<f64> {
        let theta = &self.offset + &self.basis * DVector::from_column_slice(u);
        theta.as_slice().to_vec()
    }

    fn pull(&self, g_theta: &[f64], out: &mut [f64]) {
        let g = self.basis.tr_mul(&DVector::from_column_slice(g_theta));
        out.copy_from_slice(g.as_slice());
    }
}

impl<'a, P: Problem> Problem for Reparameterized<'a, P> {
    fn dim(&self) -> usize {
        self.basis.ncols()
    }

    fn objective(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let theta = self.lift(u);
        let mut g = vec![0.0; theta.len()];
        let f = self.inner.objective(&theta, &mut g);
        self.pull(&g, grad);
        f
    }

    fn num_constraints(&self) -> usize {
        self.inner.num_constraints()
    }

    fn constraints(&self, u: &[f64], out: &mut [f64]) {
        self.inner.constraints(&self.lift(u), out);
    }

    fn objective_with_vjp(&self, u: &[f64], weights: &[f64], grad: &mut [f64]) -> f64 {
        let theta = self.lift(u);
        let mut g = vec![0.0; theta.len()];
        let f = self.inner.objective_with_vjp(&theta, weights, &mut g);
        self.pull(&g, grad);
        f
    }

    fn constraint_vjp(&self, u: &[f64], weights: &[f64], grad: &mut [f64]) {
        let theta = self.lift(u);
        let mut g = vec![0.0; theta.len()];
        self.inner.constraint_vjp(&theta, weights, &mut g);
        let mut pulled = vec![0.0; grad.len()];
        self.pull(&g, &mut pulled);
        for (a, b) in grad.iter_mut().zip(pulled) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol: f64,
    pub penalty_growth: f64,
    pub initial_penalty: f64,
    /// Constraint violation accepted as feasible.
    pub feasibility_tol: f64,
    /// Hard cap on accepted steps across all outer iterations (early stop).
    pub max_total_steps: Option<usize>,
    pub lbfgs_memory: usize,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            max_outer: 20,
            max_inner: 200,
            tol: 1e-6,
            penalty_growth: 10.0,
            initial_penalty: 1.0,
            feasibility_tol: 1e-6,
            max_total_steps: None,
            lbfgs_memory: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    IterationBudget,
    StepBudget,
    LineSearchStalled,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::IterationBudget => "iteration budget exhausted",
            Termination::StepBudget => "early stop",
            Termination::LineSearchStalled => "line search stalled",
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptReport {
    pub objective: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub max_violation: f64,
    pub converged: bool,
    pub termination: Termination,
    /// `(outer iteration, merit value)` after every accepted step.
    pub merit_trace: Vec<(usize, f64)>,
}

const ARMIJO_C: f64 = 1e-4;
const SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 50;

/// Augmented-Lagrangian merit `f + Σ ψ(g_j)` and its gradient.
struct Merit<'a, P: Problem> {
    problem: &'a P,
    lambda: Vec<f64>,
    rho: f64,
    g_buf: std::cell::RefCell<Vec<f64>>,
}

impl<'a, P: Problem> Merit<'a, P> {
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let m = self.lambda.len();
        if m == 0 {
            return self.problem.objective(x, grad);
        }
        let mut g = self.g_buf.borrow_mut();
        self.problem.constraints(x, &mut g);
        let mut penalty = 0.0;
        let mut weights = vec![0.0; m];
        for j in 0..m {
            let shifted = (self.lambda[j] + self.rho * g[j]).max(0.0);
            penalty += (shifted * shifted - self.lambda[j] * self.lambda[j]) / (2.0 * self.rho);
            weights[j] = shifted;
        }
        self.problem.objective_with_vjp(x, &weights, grad) + penalty
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

enum InnerExit {
    Converged,
    Budget,
    Steps,
    Stalled,
}

/// L-BFGS on the merit function from `x` (updated in place).
fn inner_solve<P: Problem>(
    merit: &Merit<'_, P>,
    x: &mut Vec<f64>,
    config: &OptConfig,
    outer: usize,
    steps_left: &mut Option<usize>,
    trace: &mut Vec<(usize, f64)>,
    iterations: &mut usize,
) -> Result<InnerExit> {
    let n = x.len();
    let mut grad = vec![0.0; n];
    let mut value = merit.eval(x, &mut grad);
    if !value.is_finite() || !all_finite(&grad) {
        return Err(Error::Divergence("merit function is not finite".into()));
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];

    for _ in 0..config.max_inner {
        if norm(&grad) <= config.tol * (1.0 + value.abs()) {
            return Ok(InnerExit::Converged);
        }
        if *steps_left == Some(0) {
            return Ok(InnerExit::Steps);
        }
        // two-loop recursion
        let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            let rho_i = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alpha[i] = rho_i * dot(&s_hist[i], &dir);
            for (d, y) in dir.iter_mut().zip(&y_hist[i]) {
                *d -= alpha[i] * y;
            }
        }
        if k > 0 {
            let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
            dir.iter_mut().for_each(|d| *d *= gamma);
        } else {
            let gn = norm(&grad);
            dir.iter_mut().for_each(|d| *d /= gn.max(1.0));
        }
        for i in 0..k {
            let rho_i = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho_i * dot(&y_hist[i], &dir);
            for (d, s) in dir.iter_mut().zip(&s_hist[i]) {
                *d += (alpha[i] - beta) * s;
            }
        }
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) || !all_finite(&dir) {
            s_hist.clear();
            y_hist.clear();
            let gn = norm(&grad);
            dir = grad.iter().map(|g| -g / gn.max(1.0)).collect();
            slope = dot(&grad, &dir);
        }

        let mut t = 1.0;
        let mut accepted = false;
        let mut any_finite = false;
        let mut trial_value = f64::NAN;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                trial[i] = x[i] + t * dir[i];
            }
            trial_value = merit.eval(&trial, &mut trial_grad);
            if trial_value.is_finite() && all_finite(&trial_grad) {
                any_finite = true;
                if trial_value <= value + ARMIJO_C * t * slope {
                    accepted = true;
                    break;
                }
                // Minimizer of the quadratic through f(0), f'(0) and f(t),
                // kept within [t/100, t/2].
                let curvature = trial_value - value - slope * t;
                let t_quad = if curvature > 0.0 { -slope * t * t / (2.0 * curvature) } else { SHRINK * t };
                t = t_quad.clamp(0.01 * t, SHRINK * t);
            } else {
                t *= SHRINK;
            }
        }
        if !accepted {
            if !any_finite {
                return Err(Error::Divergence(format!(
                    "no finite trial point after {MAX_BACKTRACKS} backtracking steps"
                )));
            }
            return Ok(InnerExit::Stalled);
        }
        let s: Vec<f64> = trial.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if s_hist.len() == config.lbfgs_memory.max(1) {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        x.copy_from_slice(&trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        value = trial_value;
        trace.push((outer, value));
        *iterations += 1;
        if let Some(left) = steps_left.as_mut() {
            *left -= 1;
        }
    }
    if norm(&grad) <= config.tol * (1.0 + value.abs()) {
        Ok(InnerExit::Converged)
    } else {
        Ok(InnerExit::Budget)
    }
}

/// Minimizes `problem` from `x0`.
pub fn minimize<P: Problem>(problem: &P, x0: &[f64], config: &OptConfig) -> Result<(Vec<f64>, OptReport)> {
    let n = problem.dim();
    if x0.len() != n {
        return Err(Error::shape(format!(
            "start point has {} entries, problem has {n}",
            x0.len()
        )));
    }
    let m = problem.num_constraints();
    let mut scratch = vec![0.0; n];
    let f0 = problem.objective(x0, &mut scratch);
    if !f0.is_finite() || !all_finite(&scratch) {
        return Err(Error::domain("objective is not finite at the start point"));
    }

    let mut merit = Merit {
        problem,
        lambda: vec![0.0; m],
        rho: config.initial_penalty,
        g_buf: std::cell::RefCell::new(vec![0.0; m]),
    };
    let mut x = x0.to_vec();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut steps_left = config.max_total_steps;
    let mut termination = Termination::IterationBudget;
    let mut converged = false;
    let mut prev_violation = f64::INFINITY;
    let mut g = vec![0.0; m];
    let mut outer_done = 0;

    for outer in 0..config.max_outer.max(1) {
        outer_done = outer + 1;
        let exit = inner_solve(
            &merit,
            &mut x,
            config,
            outer,
            &mut steps_left,
            &mut trace,
            &mut iterations,
        )?;
        problem.constraints(&x, &mut g);
        let violation = g.iter().fold(0.0f64, |a, &v| a.max(v));
        let f = problem.objective(&x, &mut scratch);
        let mut complementarity = 0.0f64;
        for j in 0..m {
            let updated = (merit.lambda[j] + merit.rho * g[j]).max(0.0);
            complementarity = complementarity.max((updated * g[j]).abs());
            merit.lambda[j] = updated;
        }
        let stationary = matches!(exit, InnerExit::Converged);
        if stationary
            && violation <= config.feasibility_tol
            && complementarity <= config.tol * (1.0 + f.abs())
        {
            termination = Termination::Converged;
            converged = true;
            break;
        }
        match exit {
            InnerExit::Steps => {
                termination = Termination::StepBudget;
                break;
            }
            InnerExit::Stalled if m == 0 => {
                termination = Termination::LineSearchStalled;
                break;
            }
            _ => {}
        }
        if m > 0 && violation > 0.25 * prev_violation {
            merit.rho *= config.penalty_growth;
        }
        prev_violation = violation;
    }

    problem.constraints(&x, &mut g);
    let max_violation = g.iter().fold(0.0f64, |a, &v| a.max(v));
    let objective = problem.objective(&x, &mut scratch);
    Ok((
        x,
        OptReport {
            objective,
            iterations,
            outer_iterations: outer_done,
            max_violation,
            converged,
            termination,
            merit_trace: trace,
        },
    ))
}

/// Frobenius-nearest positive semidefinite matrix (negative eigenvalues
/// clamped to zero after symmetrization).
pub fn project_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::shape("PSD projection needs a square matrix"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("matrix has non-finite entries"));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let q = &eig.eigenvectors;
    let out = q * DMatrix::from_diagonal(&clamped) * q.transpose();
    Ok((&out + out.transpose()) * 0.5)
}
