//! Fixed inputs shared by the benchmarks.

use adbn::RbmParameters;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `rows x cols` matrix of independent fair coin flips.
pub fn binary_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || f64::from(u8::from(rng.random_bool(0.5))))
}

pub fn seeded_params(n_visible: usize, n_hidden: usize, seed: u64) -> RbmParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RbmParameters::initialize(n_visible, n_hidden, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_are_deterministic_and_binary() {
        let a = binary_batch(4, 9, 1);
        assert_eq!(a, binary_batch(4, 9, 1));
        assert!(a.iter().all(|&x| x == 0.0 || x == 1.0));
        assert_eq!(seeded_params(9, 3, 2), seeded_params(9, 3, 2));
    }
}
