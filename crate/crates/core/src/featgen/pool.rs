//! Non-overlapping max-pooling along the field axis.
//!
//! Windows have height `h_p` and width 1. When `h_p` does not divide the
//! row count the final window covers the remaining rows, so the output has
//! `ceil(rows / h_p)` rows. Ties resolve to the lowest row.

use crate::error::{FgcnnError, Result};
use crate::tensor::{Real, Tensor};

pub fn pooled_rows(rows: usize, h_p: usize) -> usize {
    rows.div_ceil(h_p)
}

/// Pooled tensor plus, for every output element, the input row it came from.
#[derive(Debug, Clone)]
pub struct Pooled<T> {
    pub out: Tensor<T>,
    pub argmax: Vec<u32>,
}

pub fn pool_forward<T: Real>(c: &Tensor<T>, h_p: usize) -> Result<Pooled<T>> {
    if c.ndim() != 4 || c.dim(1) == 0 || h_p == 0 {
        return Err(FgcnnError::shape(
            "pool",
            format!("input {:?}, pool height {h_p}", c.shape()),
        ));
    }
    let (bsz, rows, k, m) = (c.dim(0), c.dim(1), c.dim(2), c.dim(3));
    let out_rows = pooled_rows(rows, h_p);
    let cd = c.data();
    let mut out = Tensor::zeros(&[bsz, out_rows, k, m]);
    let mut argmax = vec![0u32; out.len()];
    for b in 0..bsz {
        for r in 0..out_rows {
            let lo = r * h_p;
            let hi = (lo + h_p).min(rows);
            for q in 0..k {
                for ch in 0..m {
                    let mut best = lo;
                    let mut best_v = cd[((b * rows + lo) * k + q) * m + ch];
                    for p in lo + 1..hi {
                        let v = cd[((b * rows + p) * k + q) * m + ch];
                        if v > best_v {
                            best = p;
                            best_v = v;
                        }
                    }
                    let oi = ((b * out_rows + r) * k + q) * m + ch;
                    out.data_mut()[oi] = best_v;
                    argmax[oi] = best as u32;
                }
            }
        }
    }
    Ok(Pooled { out, argmax })
}

/// Routes each output gradient to its argmax row; `in_shape` is the
/// shape of the pooled input.
pub fn pool_backward<T: Real>(
    dy: &Tensor<T>,
    argmax: &[u32],
    in_shape: &[usize],
) -> Result<Tensor<T>> {
    if dy.len() != argmax.len() || dy.ndim() != 4 || in_shape.len() != 4 {
        return Err(FgcnnError::shape(
            "pool_backward",
            format!("grad {:?}, {} argmax entries", dy.shape(), argmax.len()),
        ));
    }
    let (bsz, out_rows, k, m) = (dy.dim(0), dy.dim(1), dy.dim(2), dy.dim(3));
    let rows = in_shape[1];
    let mut dx = Tensor::zeros(in_shape);
    for b in 0..bsz {
        for r in 0..out_rows {
            for q in 0..k {
                for ch in 0..m {
                    let oi = ((b * out_rows + r) * k + q) * m + ch;
                    let p = argmax[oi] as usize;
                    dx.data_mut()[((b * rows + p) * k + q) * m + ch] += dy.data()[oi];
                }
            }
        }
    }
    Ok(dx)
}
