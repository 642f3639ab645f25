//! Deterministic random sampling used by the verification reports.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::geometry::PopulationStructure;

/// Per-sample seed derivation so batches can be split or parallelized
/// without changing the stream.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Standard normal via Box-Muller.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform-like point on the simplex product via exponential normalization
/// (covers interior and near-boundary states).
pub fn sample_simplex(structure: &PopulationStructure, rng: &mut impl Rng) -> DVector<f64> {
    let mut x = DVector::zeros(structure.dim());
    for (r, range) in structure.blocks().enumerate() {
        let mut sum = 0.0;
        for i in range.clone() {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            x[i] = -u.ln();
            sum += x[i];
        }
        let scale = structure.mass(r) / sum;
        for i in range {
            x[i] *= scale;
        }
    }
    x
}

/// Normal vector with entries scaled by `magnitude`.
pub fn sample_normal_vector(n: usize, magnitude: f64, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| magnitude * standard_normal(rng))
}

/// Random tangent direction: normal entries recentered per block.
pub fn sample_tangent(
    structure: &PopulationStructure,
    magnitude: f64,
    rng: &mut impl Rng,
) -> DVector<f64> {
    let mut v = sample_normal_vector(structure.dim(), magnitude, rng);
    for range in structure.blocks() {
        let mean: f64 = v.rows(range.start, range.len()).iter().sum::<f64>() / range.len() as f64;
        for i in range {
            v[i] -= mean;
        }
    }
    v
}
