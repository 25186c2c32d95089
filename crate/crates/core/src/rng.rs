//! Seeded randomness.
//!
//! All randomness in the crate flows from a `u64` seed through ChaCha8
//! (`rand_chacha`). Independent sub-streams (per seed index, per layer) are
//! selected with `set_stream`, so adding a consumer never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::matrix::DenseMatrix;

/// Generator identity recorded in experiment manifests.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng(rand_chacha 0.9, seed_from_u64, set_stream)";
pub const NORMAL_ALGORITHM: &str = "rand_distr 0.5 StandardNormal (ziggurat)";

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, mean: f64, std: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| mean + std * standard_normal(rng))
}

pub fn gaussian_vec(rng: &mut Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| standard_normal(rng)).collect()
}
