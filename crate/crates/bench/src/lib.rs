//! Shared fixtures for the benchmark targets.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() * 2.0 - 1.0)
}

pub fn class_matrix(dim: usize, classes: usize, per_class: usize, seed: u64) -> lpn_core::ClassMatrix {
    lpn_core::ClassMatrix::new(random_matrix(dim, classes * per_class, seed), classes, per_class)
        .expect("layout")
}
