//! Fixtures shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Batch, Instance, SchemaLayout};
use crate::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn layout(cards: &[usize]) -> SchemaLayout {
    SchemaLayout {
        field_names: (0..cards.len()).map(|i| format!("f{i}")).collect(),
        cardinalities: cards.to_vec(),
        digest: String::new(),
    }
}

/// `n` univalent instances with uniform values and alternating labels.
pub fn random_batch(cards: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Batch {
    let inst: Vec<Instance> = (0..n)
        .map(|i| Instance {
            fields: cards.iter().map(|&c| vec![rng.gen_range(0..c as u32)]).collect(),
            label: (i % 2) as u8,
        })
        .collect();
    Batch::from_instances(&inst.iter().collect::<Vec<_>>()).unwrap()
}
