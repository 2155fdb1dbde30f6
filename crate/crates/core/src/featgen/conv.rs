//! Field-axis convolution with kernel width 1.
//!
//! Inputs are `[batch, rows, k, m_in]`, kernels `[h, 1, m_in, m_out]`.
//! Each embedding column `q` is convolved independently along the field
//! axis with stride 1 and SAME zero padding (`(h - 1) / 2` rows above).

use crate::error::{FgcnnError, Result};
use crate::nn::activation::tanh;
use crate::tensor::{Real, Tensor};

fn dims<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<[usize; 6]> {
    if x.ndim() != 4 || w.ndim() != 4 || w.dim(1) != 1 || w.dim(2) != x.dim(3) {
        return Err(FgcnnError::shape(
            "conv",
            format!("input {:?}, kernel {:?}", x.shape(), w.shape()),
        ));
    }
    Ok([x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(3)])
}

pub fn pad_top(h: usize) -> usize {
    (h - 1) / 2
}

/// The linear part of the convolution, before any activation.
pub fn conv_linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let [bsz, rows, k, m_in, h, m_out] = dims(x, w)?;
    let pad = pad_top(h);
    let (xd, wd) = (x.data(), w.data());
    let mut out = Tensor::zeros(&[bsz, rows, k, m_out]);
    let od = out.data_mut();
    for b in 0..bsz {
        for p in 0..rows {
            for t in 0..h {
                let Some(src) = (p + t).checked_sub(pad).filter(|&s| s < rows) else {
                    continue;
                };
                for q in 0..k {
                    let xi = ((b * rows + src) * k + q) * m_in;
                    let oi = ((b * rows + p) * k + q) * m_out;
                    for ci in 0..m_in {
                        let xv = xd[xi + ci];
                        if xv == T::zero() {
                            continue;
                        }
                        let wrow = &wd[(t * m_in + ci) * m_out..(t * m_in + ci + 1) * m_out];
                        for (o, &wv) in od[oi..oi + m_out].iter_mut().zip(wrow) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `tanh(conv_linear(x, w))`.
pub fn conv_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(conv_linear(x, w)?.map(tanh))
}

/// Adjoint of [`conv_linear`]: returns `(dx, dw)`.
pub fn conv_linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [bsz, rows, k, m_in, h, m_out] = dims(x, w)?;
    if dy.shape() != [bsz, rows, k, m_out] {
        return Err(FgcnnError::shape(
            "conv_backward",
            format!("grad {:?} for output [{bsz}, {rows}, {k}, {m_out}]", dy.shape()),
        ));
    }
    let pad = pad_top(h);
    let (xd, wd, gd) = (x.data(), w.data(), dy.data());
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    for b in 0..bsz {
        for p in 0..rows {
            for t in 0..h {
                let Some(src) = (p + t).checked_sub(pad).filter(|&s| s < rows) else {
                    continue;
                };
                for q in 0..k {
                    let xi = ((b * rows + src) * k + q) * m_in;
                    let gi = ((b * rows + p) * k + q) * m_out;
                    let g = &gd[gi..gi + m_out];
                    for ci in 0..m_in {
                        let wi = (t * m_in + ci) * m_out;
                        let mut acc = T::zero();
                        for co in 0..m_out {
                            acc += wd[wi + co] * g[co];
                            dw.data_mut()[wi + co] += xd[xi + ci] * g[co];
                        }
                        dx.data_mut()[xi + ci] += acc;
                    }
                }
            }
        }
    }
    Ok((dx, dw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    // Explicitly padded copy of the input, then an unpadded sliding window.
    fn oracle(x: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
        let (bsz, rows, k, m_in) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (h, m_out) = (w.dim(0), w.dim(3));
        let top = (h - 1) / 2;
        let bottom = h - 1 - top;
        let prow = rows + top + bottom;
        let mut padded = vec![0.0; bsz * prow * k * m_in];
        for b in 0..bsz {
            for p in 0..rows {
                for q in 0..k {
                    for c in 0..m_in {
                        padded[((b * prow + p + top) * k + q) * m_in + c] =
                            x.data()[((b * rows + p) * k + q) * m_in + c];
                    }
                }
            }
        }
        let mut out = vec![0.0; bsz * rows * k * m_out];
        for b in 0..bsz {
            for p in 0..rows {
                for q in 0..k {
                    for co in 0..m_out {
                        let mut s = 0.0;
                        for t in 0..h {
                            for ci in 0..m_in {
                                s += padded[((b * prow + p + t) * k + q) * m_in + ci]
                                    * w.data()[(t * m_in + ci) * m_out + co];
                            }
                        }
                        out[((b * rows + p) * k + q) * m_out + co] = s.tanh();
                    }
                }
            }
        }
        Tensor::from_vec(&[bsz, rows, k, m_out], out).unwrap()
    }

    #[test]
    fn zero_input_gives_zero() {
        let x = Tensor::<f64>::zeros(&[2, 4, 3, 1]);
        let w = random(&[3, 1, 1, 2], 1);
        assert!(conv_forward(&x, &w).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn height_one_is_scaling() {
        let x = random(&[2, 3, 4, 1], 2);
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![0.7]).unwrap();
        let y = conv_forward(&x, &w).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, (0.7 * b).tanh());
        }
    }

    #[test]
    fn matches_padded_loop() {
        for seed in 0..3 {
            let x = random(&[1, 5, 4, 1], seed);
            let w = random(&[3, 1, 1, 2], seed + 10);
            let got = conv_forward(&x, &w).unwrap();
            let want = oracle(&x, &w);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // even height and several input channels
        let x = random(&[2, 6, 3, 2], 5);
        let w = random(&[4, 1, 2, 3], 6);
        let got = conv_forward(&x, &w).unwrap();
        let want = oracle(&x, &w);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_identity() {
        for seed in 0..3 {
            let x = random(&[2, 5, 3, 2], seed);
            let w = random(&[3, 1, 2, 2], seed + 1);
            let g = random(&[2, 5, 3, 2], seed + 2);
            let dxdir = random(x.shape(), seed + 3);
            let dwdir = random(w.shape(), seed + 4);
            let (dx, dw) = conv_linear_backward(&x, &w, &g).unwrap();
            // conv_linear is bilinear, so both directional derivatives are exact.
            let lhs_x = g.dot(&conv_linear(&dxdir, &w).unwrap());
            let lhs_w = g.dot(&conv_linear(&x, &dwdir).unwrap());
            assert!((lhs_x - dx.dot(&dxdir)).abs() < 1e-10);
            assert!((lhs_w - dw.dot(&dwdir)).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::<f64>::zeros(&[1, 4, 2, 2]);
        let w = Tensor::<f64>::zeros(&[2, 1, 3, 1]);
        assert!(conv_linear(&x, &w).is_err());
    }
}
