//! Seeded parameter initialization.
//!
//! Every tensor draws from its own stream keyed by `(seed, tensor name)`, so
//! a tensor's initial values do not depend on which other tensors a model
//! variant allocates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::tensor::{Real, Tensor};

pub fn named_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// i.i.d. uniform entries in `[-limit, limit]`.
pub fn uniform<T: Real>(shape: &[usize], limit: f64, seed: u64, name: &str) -> Tensor<T> {
    let mut rng = named_rng(seed, name);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.gen_range(-limit..=limit)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

pub fn glorot<T: Real>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    seed: u64,
    name: &str,
) -> Tensor<T> {
    uniform(shape, glorot_limit(fan_in, fan_out), seed, name)
}
