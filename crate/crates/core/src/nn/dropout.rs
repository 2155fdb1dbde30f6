//! Inverted dropout: kept units are scaled by `1/keep` during training so
//! inference is the identity.

use rand::Rng;

use crate::tensor::{Real, Tensor};

/// Applies dropout in place and returns the per-element multiplier
/// (`0` or `1/keep`) for the backward pass. `keep >= 1` is a no-op.
pub fn dropout_forward<T: Real, R: Rng + ?Sized>(
    x: &mut Tensor<T>,
    keep: f64,
    rng: &mut R,
) -> Option<Vec<T>> {
    if keep >= 1.0 {
        return None;
    }
    let scale = T::lit(1.0 / keep);
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < keep { scale } else { T::zero() })
        .collect();
    for (v, &m) in x.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Some(mask)
}

pub fn dropout_backward<T: Real>(grad: &mut Tensor<T>, mask: Option<&[T]>) {
    if let Some(mask) = mask {
        for (g, &m) in grad.data_mut().iter_mut().zip(mask) {
            *g *= m;
        }
    }
}
