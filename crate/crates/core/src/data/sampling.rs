use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::schema::{Instance, RawRow};
use crate::error::{FgcnnError, Result};

pub trait Labeled {
    fn label(&self) -> u8;
}

impl Labeled for Instance {
    fn label(&self) -> u8 {
        self.label
    }
}

impl Labeled for RawRow {
    fn label(&self) -> u8 {
        self.label
    }
}

/// Keeps every positive and each negative independently with probability
/// `keep_prob_negative`. Only negatives consume random draws, so the output
/// is a pure function of `(stream, keep_prob_negative, seed)`.
pub fn negative_sample<I: Labeled>(
    stream: impl IntoIterator<Item = I>,
    keep_prob_negative: f64,
    seed: u64,
) -> Result<Vec<I>> {
    if !(keep_prob_negative > 0.0 && keep_prob_negative <= 1.0) {
        return Err(FgcnnError::Config(format!(
            "keep_prob_negative must lie in (0, 1], got {keep_prob_negative}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(stream
        .into_iter()
        .filter(|item| item.label() == 1 || rng.gen::<f64>() < keep_prob_negative)
        .collect())
}
