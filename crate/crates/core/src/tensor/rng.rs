//! Seeded, name-splittable random streams.
//!
//! Each stream is a ChaCha8 generator whose 64-bit seed mixes the global seed
//! with an FNV-1a hash of the stream name, so adding a new stream never
//! perturbs the draws of existing ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Real, Tensor};

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Independent generator for `(seed, stream)`.
pub fn stream(seed: u64, name: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(fnv1a(name.as_bytes()))))
}

/// Tensor of i.i.d. `N(0, std²)` draws.
pub fn normal<T: Real>(rng: &mut StreamRng, shape: impl Into<Vec<usize>>, std: f64) -> Tensor<T> {
    let shape = shape.into();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal) * std))
        .collect();
    Tensor::from_parts(shape, data)
}

/// Tensor of i.i.d. `U(lo, hi)` draws.
pub fn uniform<T: Real>(rng: &mut StreamRng, shape: impl Into<Vec<usize>>, lo: f64, hi: f64) -> Tensor<T> {
    let shape = shape.into();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(lo..hi))).collect();
    Tensor::from_parts(shape, data)
}
