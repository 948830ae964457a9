//! Seeded random instances for the empirical verifiers.
//!
//! All randomized suites draw from [`Rng`], a ChaCha8 stream seeded from a
//! `u64`; the stream is specified by the algorithm and therefore identical
//! across platforms.

use std::sync::Arc;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::hilbert::{HVec, SpectralSpace};
use crate::path::{Path, TimeGrid};
use crate::scalar::Scalar;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform<T: Scalar>(rng: &mut Rng, lo: f64, hi: f64) -> T {
    T::lit(rng.gen_range(lo..hi))
}

pub fn random_vector<T: Scalar>(rng: &mut Rng, dim: usize, scale: f64) -> HVec<T> {
    HVec::new((0..dim).map(|_| T::lit(scale * rng.gen_range(-1.0..1.0))).collect())
}

/// A random path up to `horizon_index`: a random walk whose increments and
/// starting point share a log-uniform magnitude in `[0.05, 3]`.
pub fn random_path<T: Scalar>(
    rng: &mut Rng,
    space: &Arc<SpectralSpace<T>>,
    grid: TimeGrid<T>,
    horizon_index: usize,
) -> Result<Path<T>> {
    let scale = (rng.gen_range(0.05f64.ln()..3.0f64.ln())).exp();
    let dim = space.dim();
    let mut x: HVec<T> = random_vector(rng, dim, scale);
    let mut samples = Vec::with_capacity(horizon_index + 1);
    samples.push(x.clone());
    for _ in 0..horizon_index {
        x = &x + &random_vector(rng, dim, 0.5 * scale);
        samples.push(x.clone());
    }
    Path::new(space.clone(), grid, samples)
}

/// A path near `g` with the same horizon.
pub fn perturbed_path<T: Scalar>(rng: &mut Rng, g: &Path<T>, size: f64) -> Result<Path<T>> {
    let dim = g.dim();
    let samples = g.samples().iter().map(|s| s + &random_vector(rng, dim, size)).collect();
    Path::new(g.space().clone(), *g.grid(), samples)
}

pub fn random_index(rng: &mut Rng, lo: usize, hi_inclusive: usize) -> usize {
    rng.gen_range(lo..=hi_inclusive)
}

pub fn random_labels(rng: &mut Rng, n_controls: usize, len: usize) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(0..n_controls)).collect()
}

pub fn coin(rng: &mut Rng, p: f64) -> bool {
    rng.gen_bool(p)
}
