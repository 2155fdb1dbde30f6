use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::schema::Instance;
use crate::error::{FgcnnError, Result};

/// Densified mini-batch. `indices` and `mask` are `[size, n_fields, max_vals]`
/// row-major; masked-out slots hold index 0 and must contribute nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub n_fields: usize,
    pub max_vals: usize,
    pub indices: Vec<u32>,
    pub mask: Vec<u8>,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn from_instances(instances: &[&Instance]) -> Result<Self> {
        let first = instances.first().ok_or(FgcnnError::Empty("batch"))?;
        let n_fields = first.fields.len();
        let max_vals = instances
            .iter()
            .flat_map(|i| i.fields.iter().map(Vec::len))
            .max()
            .unwrap_or(1)
            .max(1);
        let size = instances.len();
        let mut indices = vec![0u32; size * n_fields * max_vals];
        let mut mask = vec![0u8; indices.len()];
        let mut labels = Vec::with_capacity(size);
        for (b, inst) in instances.iter().enumerate() {
            if inst.fields.len() != n_fields {
                return Err(FgcnnError::shape(
                    "batch",
                    format!("instance {b} has {} fields, expected {n_fields}", inst.fields.len()),
                ));
            }
            if inst.label > 1 {
                return Err(FgcnnError::Encoding(format!("label {} is not binary", inst.label)));
            }
            for (f, vals) in inst.fields.iter().enumerate() {
                let base = (b * n_fields + f) * max_vals;
                for (v, &idx) in vals.iter().enumerate() {
                    indices[base + v] = idx;
                    mask[base + v] = 1;
                }
            }
            labels.push(f64::from(inst.label));
        }
        Ok(Batch {
            size,
            n_fields,
            max_vals,
            indices,
            mask,
            labels,
        })
    }

    /// Active local indices of field `f` in row `b`.
    pub fn values(&self, b: usize, f: usize) -> impl Iterator<Item = u32> + '_ {
        let base = (b * self.n_fields + f) * self.max_vals;
        (base..base + self.max_vals)
            .filter(move |&i| self.mask[i] == 1)
            .map(move |i| self.indices[i])
    }

    pub fn unmasked(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Splits `instances` into batches of `batch_size` (the last may be short),
/// shuffling first when a seed is given.
pub fn make_batches(
    instances: &[Instance],
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<Vec<Batch>> {
    if instances.is_empty() {
        return Err(FgcnnError::Empty("cannot batch an empty dataset"));
    }
    if batch_size < 1 {
        return Err(FgcnnError::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<&Instance> = instances.iter().collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order.chunks(batch_size).map(Batch::from_instances).collect()
}
