use crate::error::{FgcnnError, Result};
use crate::tensor::{Real, Tensor};

/// `x·W + b` for `x: [batch, d_in]`, `W: [d_in, d_out]`, `b: [d_out]`.
pub fn affine<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, d_in, d_out) = check_shapes(x, w, b)?;
    let mut out = Tensor::zeros(&[batch, d_out]);
    let wd = w.data();
    for r in 0..batch {
        let xr = x.row(r);
        let or = out.row_mut(r);
        or.copy_from_slice(b.data());
        for (i, &xi) in xr.iter().enumerate().take(d_in) {
            if xi == T::zero() {
                continue;
            }
            let wr = &wd[i * d_out..(i + 1) * d_out];
            for (o, &wv) in or.iter_mut().zip(wr) {
                *o += xi * wv;
            }
        }
    }
    Ok(out)
}

pub struct AffineGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

/// Adjoint of [`affine`] given the upstream gradient `dy: [batch, d_out]`.
pub fn affine_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<AffineGrads<T>> {
    if x.ndim() != 2 || w.ndim() != 2 || dy.ndim() != 2 {
        return Err(FgcnnError::shape("affine_backward", "expected rank-2 operands"));
    }
    let (batch, d_in) = (x.dim(0), x.dim(1));
    let d_out = w.dim(1);
    if w.dim(0) != d_in || dy.dim(0) != batch || dy.dim(1) != d_out {
        return Err(FgcnnError::shape(
            "affine_backward",
            format!("x {:?}, W {:?}, dy {:?}", x.shape(), w.shape(), dy.shape()),
        ));
    }
    let mut dx = Tensor::zeros(&[batch, d_in]);
    let mut dw = Tensor::zeros(&[d_in, d_out]);
    let mut db = Tensor::zeros(&[d_out]);
    let wd = w.data();
    for r in 0..batch {
        let dyr = dy.row(r);
        for (acc, &g) in db.data_mut().iter_mut().zip(dyr) {
            *acc += g;
        }
        let xr = x.row(r);
        let dxr = dx.row_mut(r);
        for i in 0..d_in {
            let wr = &wd[i * d_out..(i + 1) * d_out];
            dxr[i] = wr.iter().zip(dyr).map(|(&a, &b)| a * b).sum();
        }
        let dwd = dw.data_mut();
        for (i, &xi) in xr.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let row = &mut dwd[i * d_out..(i + 1) * d_out];
            for (acc, &g) in row.iter_mut().zip(dyr) {
                *acc += xi * g;
            }
        }
    }
    Ok(AffineGrads { dx, dw, db })
}

fn check_shapes<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    if x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1 {
        return Err(FgcnnError::shape(
            "affine",
            format!("ranks x {:?}, W {:?}, b {:?}", x.shape(), w.shape(), b.shape()),
        ));
    }
    let (batch, d_in) = (x.dim(0), x.dim(1));
    if w.dim(0) != d_in || w.dim(1) != b.dim(0) {
        return Err(FgcnnError::shape(
            "affine",
            format!("x {:?}, W {:?}, b {:?}", x.shape(), w.shape(), b.shape()),
        ));
    }
    Ok((batch, d_in, w.dim(1)))
}
