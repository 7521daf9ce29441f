//! Pairwise constraints, the Mahalanobis (MMC) baseline, and TPS metric
//! learning for nearest-neighbour classification.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::optim::{minimize, project_psd, OptConfig, OptReport, Problem};
use crate::tps::{
    build_side_basis, distinct_rows, kernel_matrix, select_anchors, AnchorMethod, KernelSpec,
    SideConditionMode, TpsTransform, TransformParameterization,
};

/// Same-class (`similar`) and different-class (`dissimilar`) index pairs,
/// each stored as `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSets {
    pub similar: Vec<(usize, usize)>,
    pub dissimilar: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCaps {
    pub max_similar: usize,
    pub max_dissimilar: usize,
}

impl Default for PairCaps {
    fn default() -> Self {
        PairCaps {
            max_similar: 10_000,
            max_dissimilar: 10_000,
        }
    }
}

fn subsample(pairs: Vec<(usize, usize)>, cap: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    if pairs.len() <= cap {
        return pairs;
    }
    let mut keep = index::sample(rng, pairs.len(), cap).into_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| pairs[i]).collect()
}

/// Enumerates all pairs, then subsamples each set uniformly (seeded) when it
/// exceeds its cap.
pub fn build_pairs(labels: &[usize], caps: PairCaps, seed: u64) -> Result<PairSets> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::param(format!("need at least 2 samples for pairs, got {n}")));
    }
    let mut similar = Vec::new();
    let mut dissimilar = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if labels[i] == labels[j] {
                similar.push((i, j));
            } else {
                dissimilar.push((i, j));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(PairSets {
        similar: subsample(similar, caps.max_similar, &mut rng),
        dissimilar: subsample(dissimilar, caps.max_dissimilar, &mut rng),
    })
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `D_M(x, y) = sqrt((x−y)ᵀ M (x−y))` for a PSD `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisMetric {
    pub m: DMatrix<f64>,
}

impl MahalanobisMetric {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_psd(&m)?;
        Ok(MahalanobisMetric { m })
    }

    pub fn distance(&self, xi: &[f64], xj: &[f64]) -> Result<f64> {
        Ok(quad_form(&self.m, xi, xj)?.max(0.0).sqrt())
    }

    /// A factor `L` with `M = LᵀL` (symmetric square root).
    pub fn factor(&self) -> DMatrix<f64> {
        let eig = self.m.clone().symmetric_eigen();
        let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let q = &eig.eigenvectors;
        q * DMatrix::from_diagonal(&roots) * q.transpose()
    }
}

fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::shape("metric matrix must be square"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("metric matrix has non-finite entries"));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * m.amax().max(1.0) {
        return Err(Error::domain("metric matrix is not symmetric"));
    }
    let lo = min_eigenvalue(m);
    if lo < -1e-8 {
        return Err(Error::domain(format!(
            "metric matrix is not positive semidefinite (min eigenvalue {lo:e})"
        )));
    }
    Ok(())
}

fn quad_form(m: &DMatrix<f64>, xi: &[f64], xj: &[f64]) -> Result<f64> {
    let d = m.nrows();
    if xi.len() != d || xj.len() != d {
        return Err(Error::shape(format!(
            "points have {} and {} coordinates, metric is {d}×{d}",
            xi.len(),
            xj.len()
        )));
    }
    let diff: Vec<f64> = xi.iter().zip(xj).map(|(a, b)| a - b).collect();
    let mut s = 0.0;
    for a in 0..d {
        for b in 0..d {
            s += diff[a] * m[(a, b)] * diff[b];
        }
    }
    Ok(s)
}

pub fn mahalanobis_distance(m: &DMatrix<f64>, xi: &[f64], xj: &[f64]) -> Result<f64> {
    check_psd(m)?;
    Ok(quad_form(m, xi, xj)?.max(0.0).sqrt())
}

/// `Σ (x_i − x_j)(x_i − x_j)ᵀ` over the pairs.
fn scatter(x: &DMatrix<f64>, pairs: &[(usize, usize)]) -> DMatrix<f64> {
    let d = x.ncols();
    let mut s = DMatrix::zeros(d, d);
    for &(i, j) in pairs {
        let diff = x.row(i) - x.row(j);
        s += diff.transpose() * &diff;
    }
    s
}

fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmcConfig {
    /// Relative step: each update moves `M` by `step·‖M‖_F` along the
    /// normalized gradient.
    pub step: f64,
    pub max_iter: usize,
}

impl Default for MmcConfig {
    fn default() -> Self {
        MmcConfig {
            step: 0.1,
            max_iter: 500,
        }
    }
}

/// Projected gradient descent for `min Σ_P D²_M` s.t. `M ⪰ 0`,
/// `Σ_N D²_M ≥ 1`.
pub fn mmc_train(x: &DMatrix<f64>, pairs: &PairSets, config: &MmcConfig) -> Result<MahalanobisMetric> {
    mmc_train_counted(x, pairs, config).map(|(m, _)| m)
}

/// `mmc_train` plus the number of gradient iterations taken.
pub fn mmc_train_counted(x: &DMatrix<f64>, pairs: &PairSets, config: &MmcConfig) -> Result<(MahalanobisMetric, usize)> {
    if pairs.dissimilar.is_empty() {
        return Err(Error::param("MMC needs at least one different-class pair"));
    }
    let d = x.ncols();
    let sp = scatter(x, &pairs.similar);
    let sn = scatter(x, &pairs.dissimilar);
    if sn.trace() <= 0.0 {
        return Err(Error::degenerate("all different-class pairs coincide"));
    }
    let feasible = |m: DMatrix<f64>| -> Option<DMatrix<f64>> {
        let s = trace_product(&m, &sn);
        if s <= 1e-300 {
            None
        } else if s < 1.0 {
            Some(m / s)
        } else {
            Some(m)
        }
    };
    let mut m = DMatrix::identity(d, d);
    m /= trace_product(&m, &sn);
    let sp_norm = sp.norm();
    if sp_norm == 0.0 {
        return Ok((MahalanobisMetric::new(m)?, 0));
    }
    let mut step = config.step;
    let mut iterations = 0;
    for _ in 0..config.max_iter {
        iterations += 1;
        let eta = step * m.norm() / sp_norm;
        let candidate = project_psd(&(&m - &sp * eta))?;
        match feasible(candidate) {
            Some(next) => {
                let change = (&next - &m).norm() / m.norm();
                let better = trace_product(&next, &sp) <= trace_product(&m, &sp);
                if better {
                    m = next;
                    if change < 1e-10 {
                        break;
                    }
                } else {
                    step *= 0.5;
                }
            }
            None => step *= 0.5,
        }
        if step < 1e-12 {
            break;
        }
    }
    Ok((MahalanobisMetric::new((&m + m.transpose()) * 0.5)?, iterations))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TmlNnConfig {
    pub lambda: f64,
    pub anchor_fraction: f64,
    pub anchor_method: AnchorMethod,
    /// `None` picks the default for the input dimension.
    pub kernel: Option<KernelSpec>,
    pub side_conditions: SideConditionMode,
    pub optimizer: OptConfig,
    pub pair_caps: PairCaps,
    pub seed: u64,
    /// Keep Ψ at zero: the learner reduces to a linear (Mahalanobis) map.
    pub freeze_psi: bool,
}

impl Default for TmlNnConfig {
    fn default() -> Self {
        TmlNnConfig {
            lambda: 1.0,
            anchor_fraction: 0.3,
            anchor_method: AnchorMethod::KMedoids,
            kernel: None,
            side_conditions: SideConditionMode::PerDimension,
            optimizer: OptConfig::default(),
            pair_caps: PairCaps::default(),
            seed: 0,
            freeze_psi: false,
        }
    }
}

/// Number of anchors used for `n` training rows with `distinct` unique rows.
pub fn anchor_count(n: usize, fraction: f64, distinct: usize) -> usize {
    let p = (fraction * n as f64).ceil() as usize;
    p.max(3).min(distinct)
}

/// `Σ_pairs ‖F_i − F_j‖²` over the rows of `f`.
fn pair_sum(f: &DMatrix<f64>, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| (f.row(i) - f.row(j)).norm_squared()).sum()
}

/// `Σ_pairs (a_i − a_j)(a_i − a_j)ᵀ` over the rows of `a`, as `AᵀLA` with
/// `L` the Laplacian of the pair graph.
fn pair_scatter(a: &DMatrix<f64>, pairs: &[(usize, usize)]) -> DMatrix<f64> {
    let mut la = DMatrix::zeros(a.nrows(), a.ncols());
    for &(i, j) in pairs {
        let diff = a.row(i) - a.row(j);
        let mut ri = la.row_mut(i);
        ri += &diff;
        let mut rj = la.row_mut(j);
        rj -= &diff;
    }
    let q = a.tr_mul(&la);
    (&q + q.transpose()) * 0.5
}

/// The TML-NN objective over the flat parameter vector of a
/// [`TransformParameterization`], with the different-class scale constraint
/// `1 − Σ_N ‖f(x_i) − f(x_j)‖² ≤ 0`.
///
/// With `Θ = [L | Ψ]` and `a_i = [x_i; g(x_i)]`, every pair sum is the
/// quadratic form `tr(Θ Q Θᵀ)` for a fixed scatter `Q` of the `a_i`.
pub struct TmlNnProblem {
    pub q_similar: DMatrix<f64>,
    pub q_dissimilar: DMatrix<f64>,
    pub lambda: f64,
    pub param: TransformParameterization,
}

impl TmlNnProblem {
    /// `kernel` is the `n × p` kernel matrix between `x` and the anchors.
    pub fn new(
        x: &DMatrix<f64>,
        kernel: &DMatrix<f64>,
        pairs: &PairSets,
        lambda: f64,
        param: TransformParameterization,
    ) -> Self {
        let (n, d) = x.shape();
        let mut a = DMatrix::zeros(n, d + kernel.ncols());
        a.columns_mut(0, d).copy_from(x);
        a.columns_mut(d, kernel.ncols()).copy_from(kernel);
        TmlNnProblem {
            q_similar: pair_scatter(&a, &pairs.similar),
            q_dissimilar: pair_scatter(&a, &pairs.dissimilar),
            lambda,
            param,
        }
    }

    fn theta(&self, u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let (l, psi) = self.param.unpack(u);
        let d = l.nrows();
        let mut theta = DMatrix::zeros(d, d + psi.ncols());
        theta.columns_mut(0, d).copy_from(&l);
        theta.columns_mut(d, psi.ncols()).copy_from(&psi);
        (theta, psi)
    }

    fn pull_theta_gradient(&self, g: &DMatrix<f64>, out: &mut [f64]) {
        let d = g.nrows();
        let gl = g.columns(0, d).clone_owned();
        let gp = g.columns(d, g.ncols() - d).clone_owned();
        self.param.pullback(&gl, &gp, out);
    }

    /// `Σ_N ‖f(x_i) − f(x_j)‖²` at `u`.
    pub fn dissimilar_sum(&self, u: &[f64]) -> f64 {
        let (theta, _) = self.theta(u);
        (&theta * &self.q_dissimilar).component_mul(&theta).sum()
    }
}

impl Problem for TmlNnProblem {
    fn dim(&self) -> usize {
        self.param.len()
    }

    fn objective(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let (theta, psi) = self.theta(u);
        let tq = &theta * &self.q_similar;
        let pull = tq.component_mul(&theta).sum();
        let mut g = tq * 2.0;
        let d = theta.nrows();
        let mut gp = g.columns_mut(d, psi.ncols());
        gp += &psi * (2.0 * self.lambda);
        self.pull_theta_gradient(&g, grad);
        pull + self.lambda * psi.norm_squared()
    }

    fn num_constraints(&self) -> usize {
        1
    }

    fn constraints(&self, u: &[f64], out: &mut [f64]) {
        out[0] = 1.0 - self.dissimilar_sum(u);
    }

    fn constraint_vjp(&self, u: &[f64], weights: &[f64], grad: &mut [f64]) {
        let (theta, _) = self.theta(u);
        let g = &theta * &self.q_dissimilar * (-2.0 * weights[0]);
        let mut pulled = vec![0.0; grad.len()];
        self.pull_theta_gradient(&g, &mut pulled);
        for (a, b) in grad.iter_mut().zip(pulled) {
            *a += b;
        }
    }
}

/// `J = Σ_P ‖f(x_i) − f(x_j)‖² + λ‖Ψ‖²_F` at the given transform, with the
/// gradient in the coordinates of `param` (linear block, then the free
/// nonlinear coordinates).
pub fn tml_nn_objective(
    t: &TpsTransform,
    x: &DMatrix<f64>,
    pairs: &PairSets,
    lambda: f64,
    param: &TransformParameterization,
) -> Result<(f64, Vec<f64>)> {
    if x.ncols() != t.dim() {
        return Err(Error::shape(format!(
            "data has {} columns, transform has {}",
            x.ncols(),
            t.dim()
        )));
    }
    let n = x.nrows();
    if pairs
        .similar
        .iter()
        .chain(&pairs.dissimilar)
        .any(|&(i, j)| i >= n || j >= n)
    {
        return Err(Error::shape("pair index out of range"));
    }
    let problem = TmlNnProblem::new(x, &kernel_matrix(x, &t.anchors, t.kernel)?, pairs, lambda, param.clone());
    let u = param.pack(&t.linear, &t.psi);
    let mut grad = vec![0.0; u.len()];
    let value = problem.objective(&u, &mut grad);
    Ok((value, grad))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub initial_objective: f64,
    pub objective: f64,
    pub iterations: usize,
    pub max_violation: f64,
    pub converged: bool,
    pub termination: String,
}

#[derive(Debug, Clone)]
pub struct TmlNnModel {
    pub transform: TpsTransform,
    pub side_conditions: SideConditionMode,
    pub report: TrainReport,
}

/// Learns a TPS transform pulling same-class pairs together under the
/// different-class scale constraint.
pub fn tml_nn_train(x: &DMatrix<f64>, labels: &[usize], config: &TmlNnConfig) -> Result<TmlNnModel> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::shape(format!("{n} rows but {} labels", labels.len())));
    }
    if config.lambda < 0.0 || !config.lambda.is_finite() {
        return Err(Error::param(format!("lambda must be >= 0, got {}", config.lambda)));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::degenerate("TML-NN needs at least two classes"));
    }
    let distinct = distinct_rows(x).len();
    if distinct < 3 {
        return Err(Error::degenerate("TML-NN needs at least three distinct samples"));
    }
    let p = anchor_count(n, config.anchor_fraction, distinct);
    let anchors = select_anchors(x, p, config.anchor_method, config.seed)?;
    let kernel = config.kernel.unwrap_or_else(|| KernelSpec::default_for_dim(x.ncols()));
    let basis = build_side_basis(&anchors, config.side_conditions)?;
    let pairs = build_pairs(labels, config.pair_caps, config.seed)?;
    if pairs.dissimilar.is_empty() {
        return Err(Error::degenerate("no different-class pairs"));
    }

    let mut start = TpsTransform::identity(anchors, kernel);
    let s0 = pair_sum(x, &pairs.dissimilar);
    if s0 <= 0.0 {
        return Err(Error::degenerate("all different-class pairs coincide"));
    }
    start.linear /= s0.sqrt();

    let problem = TmlNnProblem::new(
        x,
        &kernel_matrix(x, &start.anchors, kernel)?,
        &pairs,
        config.lambda,
        TransformParameterization::new(basis, &start, false, config.freeze_psi),
    );
    let u0 = problem.param.pack(&start.linear, &start.psi);
    let mut scratch = vec![0.0; u0.len()];
    let initial_objective = problem.objective(&u0, &mut scratch);
    let (u, report): (Vec<f64>, OptReport) = minimize(&problem, &u0, &config.optimizer)?;

    let (l, psi) = problem.param.unpack(&u);
    let mut transform = TpsTransform::new(l, psi, start.anchors.clone(), kernel)?;
    let s = problem.dissimilar_sum(&u);
    if s < 1.0 {
        if s <= 0.0 {
            return Err(Error::Divergence("transform collapsed all pairs".into()));
        }
        transform.scale(1.0 / s.sqrt());
    }
    let u_final = problem.param.pack(&transform.linear, &transform.psi);
    let objective = problem.objective(&u_final, &mut scratch);
    let max_violation = (1.0 - problem.dissimilar_sum(&u_final)).max(0.0);
    Ok(TmlNnModel {
        transform,
        side_conditions: config.side_conditions,
        report: TrainReport {
            initial_objective,
            objective,
            iterations: report.iterations,
            max_violation,
            converged: report.converged,
            termination: report.termination.name().to_string(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_examples() {
        let p = build_pairs(&[0, 0, 1], PairCaps::default(), 0).unwrap();
        assert_eq!(p.similar, vec![(0, 1)]);
        assert_eq!(p.dissimilar, vec![(0, 2), (1, 2)]);
        let p = build_pairs(&[4, 4, 4, 4], PairCaps::default(), 0).unwrap();
        assert_eq!(p.similar.len(), 6);
        assert!(p.dissimilar.is_empty());
        let p = build_pairs(&[0, 1, 2], PairCaps::default(), 0).unwrap();
        assert!(p.similar.is_empty());
        assert_eq!(p.dissimilar.len(), 3);
        assert!(build_pairs(&[0], PairCaps::default(), 0).is_err());
    }

    #[test]
    fn pair_caps_subsample_deterministically() {
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let caps = PairCaps {
            max_similar: 50,
            max_dissimilar: 70,
        };
        let a = build_pairs(&labels, caps, 5).unwrap();
        let b = build_pairs(&labels, caps, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.similar.len(), 50);
        assert_eq!(a.dissimilar.len(), 70);
        for &(i, j) in &a.similar {
            assert!(i < j && labels[i] == labels[j]);
        }
        for &(i, j) in &a.dissimilar {
            assert!(i < j && labels[i] != labels[j]);
        }
    }

    #[test]
    fn mahalanobis_examples() {
        let i = DMatrix::<f64>::identity(2, 2);
        let d = mahalanobis_distance(&i, &[1.0, 2.0], &[4.0, 6.0]).unwrap();
        assert!((d - 5.0).abs() < 1e-15);
        assert_eq!(mahalanobis_distance(&i, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let d = mahalanobis_distance(&m, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!((d - 5f64.sqrt()).abs() < 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(mahalanobis_distance(&bad, &[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn factor_reproduces_metric() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let metric = MahalanobisMetric::new(m.clone()).unwrap();
        let l = metric.factor();
        assert!((l.transpose() * &l - m).norm() < 1e-12);
    }

    #[test]
    fn mmc_with_no_similar_pairs_keeps_feasible_identity_direction() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 3.0, 4.0]);
        let pairs = build_pairs(&[0, 1], PairCaps::default(), 0).unwrap();
        let metric = mmc_train(&x, &pairs, &MmcConfig::default()).unwrap();
        let s = quad_form(&metric.m, &[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!(s >= 1.0 - 1e-6);
        assert!(min_eigenvalue(&metric.m) >= -1e-10);
    }

    #[test]
    fn mmc_rejects_degenerate_input() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let pairs = build_pairs(&[0, 1], PairCaps::default(), 0).unwrap();
        assert!(matches!(
            mmc_train(&x, &pairs, &MmcConfig::default()),
            Err(Error::Degenerate(_))
        ));
        let pairs = build_pairs(&[0, 0], PairCaps::default(), 0).unwrap();
        assert!(mmc_train(&x, &pairs, &MmcConfig::default()).is_err());
    }

    #[test]
    fn anchor_count_bounds() {
        assert_eq!(anchor_count(100, 0.3, 100), 30);
        assert_eq!(anchor_count(5, 0.3, 5), 3);
        assert_eq!(anchor_count(101, 0.3, 20), 20);
    }
}
