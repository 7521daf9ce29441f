//! Thin-plate-spline deformation of the input space.
//!
//! A transform maps `x ↦ L·x + Ψ·g(x)` where `g(x)` stacks the radial
//! kernel evaluated between `x` and each anchor point. The nonlinear weights
//! are constrained so that, for every output dimension `k`, the weight row
//! `Ψ[k, :]` sums to zero and is orthogonal to the anchors' `k`-th
//! coordinates. [`SideConditionBasis`] parameterizes exactly that subspace.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Radial basis family `G(r)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelSpec {
    /// `r² ln r`, with `G(0) = 0`.
    R2LogR,
    /// `r`
    R1,
    /// `r³`
    R3,
}

impl KernelSpec {
    /// `r² ln r` for even input dimension, `r³` for odd.
    pub fn default_for_dim(d: usize) -> Self {
        if d % 2 == 0 {
            KernelSpec::R2LogR
        } else {
            KernelSpec::R3
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelSpec::R2LogR => "R2LOGR",
            KernelSpec::R1 => "R1",
            KernelSpec::R3 => "R3",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "R2LOGR" => Some(KernelSpec::R2LogR),
            "R1" => Some(KernelSpec::R1),
            "R3" => Some(KernelSpec::R3),
            _ => None,
        }
    }

    /// Kernel value for a distance already known to be finite and `>= 0`.
    #[inline]
    pub(crate) fn eval(self, r: f64) -> f64 {
        match self {
            KernelSpec::R2LogR => {
                if r == 0.0 {
                    0.0
                } else {
                    r * r * r.ln()
                }
            }
            KernelSpec::R1 => r,
            KernelSpec::R3 => r * r * r,
        }
    }

    /// Same as [`KernelSpec::eval`] but takes the squared distance, which
    /// avoids a square root for the log kernel.
    #[inline]
    pub(crate) fn eval_sq(self, r2: f64) -> f64 {
        match self {
            KernelSpec::R2LogR => {
                if r2 == 0.0 {
                    0.0
                } else {
                    0.5 * r2 * r2.ln()
                }
            }
            KernelSpec::R1 => r2.sqrt(),
            KernelSpec::R3 => r2 * r2.sqrt(),
        }
    }
}

/// Evaluates the radial kernel at distance `r`.
pub fn green_function(r: f64, kernel: KernelSpec) -> Result<f64> {
    if !r.is_finite() || r < 0.0 {
        return Err(Error::domain(format!(
            "kernel distance must be finite and non-negative, got {r}"
        )));
    }
    Ok(kernel.eval(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorMethod {
    KMedoids,
    Random,
}

impl AnchorMethod {
    pub fn name(self) -> &'static str {
        match self {
            AnchorMethod::KMedoids => "KMEDOIDS",
            AnchorMethod::Random => "RANDOM",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "KMEDOIDS" => Some(AnchorMethod::KMedoids),
            "RANDOM" => Some(AnchorMethod::Random),
            _ => None,
        }
    }
}

/// Anchor points of the radial kernel, one per row. Every anchor is a row
/// of the training matrix it was selected from.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub points: DMatrix<f64>,
    pub seed: u64,
    pub method: AnchorMethod,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

/// Indices of the first occurrence of every distinct row.
pub(crate) fn distinct_rows(x: &DMatrix<f64>) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::with_capacity(x.nrows());
    for i in 0..x.nrows() {
        let dup = keep.iter().any(|&j| x.row(i) == x.row(j));
        if !dup {
            keep.push(i);
        }
    }
    keep
}

fn sq_dist_rows(x: &DMatrix<f64>, i: usize, y: &DMatrix<f64>, j: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..x.ncols() {
        let d = x[(i, k)] - y[(j, k)];
        s += d * d;
    }
    s
}

/// Picks `p` anchors among the distinct rows of `x`.
///
/// `KMedoids` runs PAM swap refinement (at most 100 passes) from a seeded
/// random start; `Random` samples without replacement. Anchors are returned
/// in increasing row order.
pub fn select_anchors(
    x: &DMatrix<f64>,
    p: usize,
    method: AnchorMethod,
    seed: u64,
) -> Result<AnchorSet> {
    let n = x.nrows();
    if p == 0 || p > n {
        return Err(Error::param(format!(
            "anchor count must be in 1..={n}, got {p}"
        )));
    }
    let candidates = distinct_rows(x);
    let m = candidates.len();
    if p > m {
        return Err(Error::param(format!(
            "requested {p} anchors but the data has only {m} distinct rows"
        )));
    }
    let chosen: Vec<usize> = if p == m {
        candidates.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init: Vec<usize> = index::sample(&mut rng, m, p).into_vec();
        init.sort_unstable();
        let local = match method {
            AnchorMethod::Random => init,
            AnchorMethod::KMedoids => {
                let dist = DMatrix::from_fn(m, m, |a, b| {
                    sq_dist_rows(x, candidates[a], x, candidates[b]).sqrt()
                });
                pam_swap(&dist, init, 100)
            }
        };
        let mut rows: Vec<usize> = local.into_iter().map(|i| candidates[i]).collect();
        rows.sort_unstable();
        rows
    };
    let points = DMatrix::from_fn(chosen.len(), x.ncols(), |i, k| x[(chosen[i], k)]);
    Ok(AnchorSet {
        points,
        seed,
        method,
    })
}

/// Nearest and second-nearest medoid distance for every point.
fn nearest_two(dist: &DMatrix<f64>, medoids: &[usize]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = dist.nrows();
    let mut near = vec![0usize; n];
    let mut d1 = vec![f64::INFINITY; n];
    let mut d2 = vec![f64::INFINITY; n];
    for j in 0..n {
        for (slot, &m) in medoids.iter().enumerate() {
            let d = dist[(m, j)];
            if d < d1[j] {
                d2[j] = d1[j];
                d1[j] = d;
                near[j] = slot;
            } else if d < d2[j] {
                d2[j] = d;
            }
        }
    }
    (near, d1, d2)
}

/// Classic PAM: apply the best improving (medoid, non-medoid) swap per pass.
/// Ties go to the lowest medoid slot, then the lowest candidate index.
fn pam_swap(dist: &DMatrix<f64>, mut medoids: Vec<usize>, max_passes: usize) -> Vec<usize> {
    let n = dist.nrows();
    for _ in 0..max_passes {
        let (near, d1, d2) = nearest_two(dist, &medoids);
        let cost: f64 = d1.iter().sum();
        let mut best: Option<(f64, usize, usize)> = None;
        for slot in 0..medoids.len() {
            for o in 0..n {
                if medoids.contains(&o) {
                    continue;
                }
                let mut delta = 0.0;
                for j in 0..n {
                    let doj = dist[(o, j)];
                    let current = d1[j];
                    let next = if near[j] == slot {
                        doj.min(d2[j])
                    } else {
                        doj.min(current)
                    };
                    delta += next - current;
                }
                if best.map_or(true, |(b, _, _)| delta < b) {
                    best = Some((delta, slot, o));
                }
            }
        }
        match best {
            Some((delta, slot, o)) if delta < -1e-12 * cost.max(1e-300) => {
                medoids[slot] = o;
            }
            _ => break,
        }
    }
    medoids
}

/// Kernel values between `x` and every anchor.
pub fn kernel_vector(x: &[f64], anchors: &AnchorSet, kernel: KernelSpec) -> Result<DVector<f64>> {
    if x.len() != anchors.dim() {
        return Err(Error::shape(format!(
            "point has {} coordinates, anchors have {}",
            x.len(),
            anchors.dim()
        )));
    }
    Ok(DVector::from_fn(anchors.len(), |i, _| {
        let mut s = 0.0;
        for (k, xk) in x.iter().enumerate() {
            let d = xk - anchors.points[(i, k)];
            s += d * d;
        }
        kernel.eval_sq(s)
    }))
}

/// Row-wise [`kernel_vector`]: an `n × p` matrix.
pub fn kernel_matrix(x: &DMatrix<f64>, anchors: &AnchorSet, kernel: KernelSpec) -> Result<DMatrix<f64>> {
    if x.ncols() != anchors.dim() {
        return Err(Error::shape(format!(
            "data has {} columns, anchors have {}",
            x.ncols(),
            anchors.dim()
        )));
    }
    Ok(DMatrix::from_fn(x.nrows(), anchors.len(), |i, j| {
        kernel.eval_sq(sq_dist_rows(x, i, &anchors.points, j))
    }))
}

/// Which equality constraints the nonlinear weights obey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SideConditionMode {
    /// Row `k` of Ψ sums to zero and is orthogonal to the anchors' `k`-th
    /// coordinate.
    #[default]
    PerDimension,
    /// Every row of Ψ is orthogonal to the constant and to all anchor
    /// coordinates (the classical thin-plate condition).
    Full,
}

impl SideConditionMode {
    pub fn name(self) -> &'static str {
        match self {
            SideConditionMode::PerDimension => "PER_DIMENSION",
            SideConditionMode::Full => "FULL",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "PER_DIMENSION" => Some(SideConditionMode::PerDimension),
            "FULL" => Some(SideConditionMode::Full),
            _ => None,
        }
    }

    fn constraint_rows(self, anchors: &AnchorSet, k: usize) -> Vec<DVector<f64>> {
        let p = anchors.len();
        let mut rows = vec![DVector::from_element(p, 1.0)];
        match self {
            SideConditionMode::PerDimension => rows.push(anchors.points.column(k).into_owned()),
            SideConditionMode::Full => {
                for j in 0..anchors.dim() {
                    rows.push(anchors.points.column(j).into_owned());
                }
            }
        }
        rows
    }
}

/// Orthonormal null-space bases, one `p × w_k` matrix per output dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SideConditionBasis {
    pub bases: Vec<DMatrix<f64>>,
    pub mode: SideConditionMode,
}

impl SideConditionBasis {
    /// Total number of free nonlinear coordinates.
    pub fn free_dim(&self) -> usize {
        self.bases.iter().map(|b| b.ncols()).sum()
    }
}

/// Orthonormal basis of the orthogonal complement of `span(rows)` in `R^p`,
/// via Householder reflections with rank detection.
fn null_space(rows: &[DVector<f64>], p: usize) -> DMatrix<f64> {
    let mut reflectors: Vec<DVector<f64>> = Vec::new();
    for c in rows {
        let cnorm = c.norm();
        if cnorm == 0.0 {
            continue;
        }
        let mut a = c.clone();
        for v in &reflectors {
            let dot = v.dot(&a);
            a.axpy(-2.0 * dot, v, 1.0);
        }
        let r = reflectors.len();
        let tail = a.rows(r, p - r).norm();
        if tail <= 1e-10 * cnorm {
            continue;
        }
        let alpha = if a[r] >= 0.0 { -tail } else { tail };
        let mut v = DVector::zeros(p);
        v.rows_mut(r, p - r).copy_from(&a.rows(r, p - r));
        v[r] -= alpha;
        let vn = v.norm();
        v /= vn;
        reflectors.push(v);
    }
    let rank = reflectors.len();
    let mut basis = DMatrix::zeros(p, p - rank);
    for (col, j) in (rank..p).enumerate() {
        let mut e = DVector::zeros(p);
        e[j] = 1.0;
        for v in reflectors.iter().rev() {
            let dot = v.dot(&e);
            e.axpy(-2.0 * dot, v, 1.0);
        }
        basis.set_column(col, &e);
    }
    basis
}

/// `bᵀ·v` over the contiguous columns of `b`.
fn basis_tr_mul<'a>(b: &'a DMatrix<f64>, v: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
    b.as_slice()
        .chunks_exact(b.nrows())
        .map(move |col| col.iter().zip(v).map(|(x, y)| x * y).sum())
}

/// Builds the per-dimension null-space bases for the side conditions.
pub fn build_side_basis(anchors: &AnchorSet, mode: SideConditionMode) -> Result<SideConditionBasis> {
    let p = anchors.len();
    if p < 3 {
        return Err(Error::param(format!(
            "side conditions need at least 3 anchors, got {p}"
        )));
    }
    let bases = (0..anchors.dim())
        .map(|k| null_space(&mode.constraint_rows(anchors, k), p))
        .collect::<Vec<_>>();
    if bases.iter().any(|b| b.ncols() == 0) {
        return Err(Error::param(
            "side conditions leave no free nonlinear weights".to_string(),
        ));
    }
    Ok(SideConditionBasis { bases, mode })
}

/// `f(x) = L·x + Ψ·g(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TpsTransform {
    /// `d × d`
    pub linear: DMatrix<f64>,
    /// `d × p`
    pub psi: DMatrix<f64>,
    pub anchors: AnchorSet,
    pub kernel: KernelSpec,
}

impl TpsTransform {
    pub fn identity(anchors: AnchorSet, kernel: KernelSpec) -> Self {
        let d = anchors.dim();
        let p = anchors.len();
        TpsTransform {
            linear: DMatrix::identity(d, d),
            psi: DMatrix::zeros(d, p),
            anchors,
            kernel,
        }
    }

    pub fn new(
        linear: DMatrix<f64>,
        psi: DMatrix<f64>,
        anchors: AnchorSet,
        kernel: KernelSpec,
    ) -> Result<Self> {
        let d = anchors.dim();
        if linear.shape() != (d, d) || psi.shape() != (d, anchors.len()) {
            return Err(Error::shape(format!(
                "L is {:?} and Ψ is {:?}, expected ({d}, {d}) and ({d}, {})",
                linear.shape(),
                psi.shape(),
                anchors.len()
            )));
        }
        Ok(TpsTransform {
            linear,
            psi,
            anchors,
            kernel,
        })
    }

    pub fn dim(&self) -> usize {
        self.linear.nrows()
    }

    pub fn apply(&self, x: &[f64]) -> Result<DVector<f64>> {
        let g = kernel_vector(x, &self.anchors, self.kernel)?;
        let xv = DVector::from_column_slice(x);
        Ok(&self.linear * xv + &self.psi * g)
    }

    /// Applies the transform to every row of `x`.
    pub fn apply_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let g = kernel_matrix(x, &self.anchors, self.kernel)?;
        Ok(self.apply_with_kernel(x, &g))
    }

    /// Batch evaluation with a precomputed kernel matrix.
    pub(crate) fn apply_with_kernel(&self, x: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
        x * self.linear.transpose() + g * self.psi.transpose()
    }

    /// Largest absolute residual of the side conditions under `mode`.
    pub fn side_condition_residual(&self, mode: SideConditionMode) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.dim() {
            let row = self.psi.row(k).transpose();
            for c in mode.constraint_rows(&self.anchors, k) {
                worst = worst.max(row.dot(&c).abs());
            }
        }
        worst
    }

    /// Multiplies the whole map by `s`; side conditions are preserved.
    pub fn scale(&mut self, s: f64) {
        self.linear *= s;
        self.psi *= s;
    }
}

/// Maps a flat optimization vector to `(L, Ψ)`.
///
/// Layout: `L` row-major (omitted when frozen) followed by the free
/// coordinates `c_k` of each Ψ row in its side-condition basis (omitted when
/// frozen). Frozen blocks keep the values they were created with.
#[derive(Debug, Clone)]
pub struct TransformParameterization {
    pub basis: SideConditionBasis,
    pub freeze_linear: bool,
    pub freeze_psi: bool,
    fixed_linear: DMatrix<f64>,
    fixed_psi: DMatrix<f64>,
}

impl TransformParameterization {
    pub fn new(basis: SideConditionBasis, start: &TpsTransform, freeze_linear: bool, freeze_psi: bool) -> Self {
        TransformParameterization {
            basis,
            freeze_linear,
            freeze_psi,
            fixed_linear: start.linear.clone(),
            fixed_psi: start.psi.clone(),
        }
    }

    fn d(&self) -> usize {
        self.fixed_linear.nrows()
    }

    fn linear_len(&self) -> usize {
        if self.freeze_linear {
            0
        } else {
            self.d() * self.d()
        }
    }

    pub fn len(&self) -> usize {
        self.linear_len() + if self.freeze_psi { 0 } else { self.basis.free_dim() }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates of `(L, Ψ)`. Ψ rows are projected onto their bases.
    pub fn pack(&self, linear: &DMatrix<f64>, psi: &DMatrix<f64>) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.len());
        if !self.freeze_linear {
            for i in 0..self.d() {
                for j in 0..self.d() {
                    u.push(linear[(i, j)]);
                }
            }
        }
        if !self.freeze_psi {
            let mut row = Vec::new();
            for (k, b) in self.basis.bases.iter().enumerate() {
                row.clear();
                row.extend(psi.row(k).iter());
                u.extend(basis_tr_mul(b, &row));
            }
        }
        u
    }

    pub fn unpack(&self, u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.d();
        let (linear, rest) = if self.freeze_linear {
            (self.fixed_linear.clone(), u)
        } else {
            let (head, rest) = u.split_at(d * d);
            (DMatrix::from_row_slice(d, d, head), rest)
        };
        let psi = if self.freeze_psi {
            self.fixed_psi.clone()
        } else {
            let p = self.fixed_psi.ncols();
            let mut psi = DMatrix::zeros(d, p);
            let mut offset = 0;
            let mut row = vec![0.0; p];
            for (k, b) in self.basis.bases.iter().enumerate() {
                let w = b.ncols();
                row.iter_mut().for_each(|v| *v = 0.0);
                for (col, &c) in b.as_slice().chunks_exact(p).zip(&rest[offset..offset + w]) {
                    for (r, bv) in row.iter_mut().zip(col) {
                        *r += bv * c;
                    }
                }
                for (j, v) in row.iter().enumerate() {
                    psi[(k, j)] = *v;
                }
                offset += w;
            }
            psi
        };
        (linear, psi)
    }

    /// Chain rule from `(∂J/∂L, ∂J/∂Ψ)` to the flat coordinates.
    pub fn pullback(&self, grad_linear: &DMatrix<f64>, grad_psi: &DMatrix<f64>, out: &mut [f64]) {
        let d = self.d();
        let mut idx = 0;
        if !self.freeze_linear {
            for i in 0..d {
                for j in 0..d {
                    out[idx] = grad_linear[(i, j)];
                    idx += 1;
                }
            }
        }
        if !self.freeze_psi {
            let mut row = Vec::new();
            for (k, b) in self.basis.bases.iter().enumerate() {
                row.clear();
                row.extend(grad_psi.row(k).iter());
                for c in basis_tr_mul(b, &row) {
                    out[idx] = c;
                    idx += 1;
                }
            }
        }
    }
}
