//! Seeded sampling helpers shared by the problems and the eigensolver.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub(crate) fn unit_sphere(dim: usize, rng: &mut impl Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| -> f64 { StandardNormal.sample(rng) });
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Spherically symmetric vector with norm at most `radius` (zero mean by
/// symmetry).
pub(crate) fn bounded_symmetric_noise(dim: usize, radius: f64, rng: &mut impl Rng) -> DVector<f64> {
    let r: f64 = rng.random::<f64>() * radius;
    unit_sphere(dim, rng) * r
}
