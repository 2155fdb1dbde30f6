//! Turning pooled maps `[batch, rows, k, m]` into new field embeddings.

use crate::error::{FgcnnError, Result};
use crate::nn::activation::tanh;
use crate::nn::dense::affine;
use crate::tensor::{Real, Tensor};

/// `[batch, rows, k, m]` viewed as `[batch, rows·k·m]`.
pub fn flatten_maps<T: Real>(s: &Tensor<T>) -> Result<Tensor<T>> {
    let b = s.dim(0);
    let rest = s.len() / b.max(1);
    s.clone().reshape(&[b, rest])
}

/// `tanh(flatten(S)·WR + BR)`, reshaped to `[batch, rows·m_r, k]`.
pub fn recombine_forward<T: Real>(
    s: &Tensor<T>,
    wr: &Tensor<T>,
    br: &Tensor<T>,
    k: usize,
) -> Result<Tensor<T>> {
    let z = affine(&flatten_maps(s)?, wr, br)?;
    units_to_fields(z.map(tanh), k)
}

pub fn units_to_fields<T: Real>(z: Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (b, units) = (z.dim(0), z.dim(1));
    if units % k != 0 {
        return Err(FgcnnError::shape(
            "recombine",
            format!("{units} output units are not a multiple of k={k}"),
        ));
    }
    z.reshape(&[b, units / k, k])
}

/// Reads pooled maps directly as fields: channel `c` of pooled row `p`
/// becomes field `p·m + c`, whose `k` entries run over the embedding axis.
pub fn maps_to_fields<T: Real>(s: &Tensor<T>) -> Tensor<T> {
    let (bsz, rows, k, m) = (s.dim(0), s.dim(1), s.dim(2), s.dim(3));
    let mut out = Tensor::zeros(&[bsz, rows * m, k]);
    for b in 0..bsz {
        for p in 0..rows {
            for q in 0..k {
                for c in 0..m {
                    out.data_mut()[(b * rows * m + p * m + c) * k + q] =
                        s.data()[((b * rows + p) * k + q) * m + c];
                }
            }
        }
    }
    out
}

/// Adjoint of [`maps_to_fields`]; `map_shape` is the shape of the pooled maps.
pub fn fields_to_maps<T: Real>(d: &Tensor<T>, map_shape: &[usize]) -> Result<Tensor<T>> {
    let (bsz, rows, k, m) = (map_shape[0], map_shape[1], map_shape[2], map_shape[3]);
    if d.shape() != [bsz, rows * m, k] {
        return Err(FgcnnError::shape(
            "fields_to_maps",
            format!("grad {:?} for maps {map_shape:?}", d.shape()),
        ));
    }
    let mut out = Tensor::zeros(map_shape);
    for b in 0..bsz {
        for p in 0..rows {
            for q in 0..k {
                for c in 0..m {
                    out.data_mut()[((b * rows + p) * k + q) * m + c] =
                        d.data()[(b * rows * m + p * m + c) * k + q];
                }
            }
        }
    }
    Ok(out)
}
