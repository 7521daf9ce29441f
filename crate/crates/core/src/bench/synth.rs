use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    /// One class per radius.
    ConcentricCircles { radii: Vec<f64> },
    /// One isotropic Gaussian class per center.
    Blobs { centers: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub generator: Generator,
    pub per_class: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Two circles of radius 1 and 2, `n` points in total.
    pub fn circles(n: usize, noise: f64, seed: u64) -> Self {
        SyntheticSpec {
            generator: Generator::ConcentricCircles { radii: vec![1.0, 2.0] },
            per_class: n / 2,
            noise,
            seed,
        }
    }
}

fn normal(std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, std).map_err(|e| Error::param(format!("noise: {e}")))
}

/// Points at uniform random angles on each circle, with Gaussian radial
/// noise; class `c` is the circle with radius `radii[c]`.
pub fn make_circles(spec: &SyntheticSpec) -> Result<Dataset> {
    let Generator::ConcentricCircles { radii } = &spec.generator else {
        return Err(Error::param("make_circles needs a concentric-circles spec"));
    };
    if radii.is_empty() || radii.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::param("radii must be positive"));
    }
    for (i, a) in radii.iter().enumerate() {
        if radii[..i].contains(a) {
            return Err(Error::param("radii must be distinct"));
        }
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::param("noise must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = normal(spec.noise)?;
    let n = radii.len() * spec.per_class;
    let mut flat = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for (c, &r) in radii.iter().enumerate() {
        for _ in 0..spec.per_class {
            let theta = rng.gen_range(0.0..TAU);
            let rho = r + noise.sample(&mut rng);
            flat.push(rho * theta.cos());
            flat.push(rho * theta.sin());
            labels.push(c);
        }
    }
    Dataset::new(
        DMatrix::from_row_slice(n, 2, &flat),
        labels,
        (0..radii.len()).map(|c| c.to_string()).collect(),
    )
}

pub fn make_blobs(spec: &SyntheticSpec) -> Result<Dataset> {
    let Generator::Blobs { centers } = &spec.generator else {
        return Err(Error::param("make_blobs needs a blobs spec"));
    };
    let d = centers.first().map(Vec::len).unwrap_or(0);
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(Error::shape("blob centers must share a positive dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = normal(spec.noise)?;
    let n = centers.len() * spec.per_class;
    let mut flat = Vec::with_capacity(d * n);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            flat.extend(center.iter().map(|m| m + noise.sample(&mut rng)));
            labels.push(c);
        }
    }
    Dataset::new(
        DMatrix::from_row_slice(n, d, &flat),
        labels,
        (0..centers.len()).map(|c| c.to_string()).collect(),
    )
}

pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    match spec.generator {
        Generator::ConcentricCircles { .. } => make_circles(spec),
        Generator::Blobs { .. } => make_blobs(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_circles_have_exact_radii() {
        let d = make_circles(&SyntheticSpec::circles(40, 0.0, 3)).unwrap();
        for (r, &l) in d.features.row_iter().zip(&d.labels) {
            assert!((r.norm() - [1.0, 2.0][l]).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_generation_is_repeatable() {
        let s = SyntheticSpec::circles(50, 0.05, 9);
        assert_eq!(make_circles(&s).unwrap(), make_circles(&s).unwrap());
    }

    #[test]
    fn bad_radius_rejected() {
        let mut s = SyntheticSpec::circles(10, 0.0, 0);
        s.generator = Generator::ConcentricCircles { radii: vec![1.0, -1.0] };
        assert!(make_circles(&s).is_err());
    }
}
