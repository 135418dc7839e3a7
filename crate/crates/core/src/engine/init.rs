use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Scalar, Tensor};

/// I.i.d. uniform values on `[-1/sqrt(n), 1/sqrt(n)]`, `n` being the number
/// of elements of `shape`. Deterministic in `seed`.
pub fn init_uniform<F: Scalar>(shape: &[usize], seed: u64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    init_uniform_bound(shape, 1.0 / (n as f64).sqrt(), seed)
}

/// I.i.d. uniform values on `[-bound, bound]`.
pub fn init_uniform_bound<F: Scalar>(shape: &[usize], bound: f64, seed: u64) -> Tensor<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| F::from_f64(rng.random_range(-bound..=bound)))
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
