//! Per-dimension batch normalization over `[rows, d]` inputs.
//!
//! Train mode standardizes with the mini-batch mean and biased variance,
//! `(x - mean) / sqrt(var + eps)`, then scales by `gamma` and shifts by
//! `beta`. Infer mode substitutes the running statistics, which are
//! updated as `running = momentum * running + (1 - momentum) * batch`.

use crate::error::{FgcnnError, Result};
use crate::tensor::{Real, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(dim: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[dim]),
            var: Tensor::full(&[dim], T::one()),
        }
    }

    pub fn update(&mut self, cache: &BnCache<T>, momentum: f64) {
        let mo = T::lit(momentum);
        let rest = T::one() - mo;
        for (r, &b) in self.mean.data_mut().iter_mut().zip(&cache.mean) {
            *r = mo * *r + rest * b;
        }
        for (r, &b) in self.var.data_mut().iter_mut().zip(&cache.var) {
            *r = mo * *r + rest * b;
        }
    }
}

/// Values saved by a train-mode forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

fn check<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize)> {
    if x.ndim() != 2 || gamma.len() != x.dim(1) || beta.len() != x.dim(1) {
        return Err(FgcnnError::shape(
            "batchnorm",
            format!("x {:?}, gamma {:?}, beta {:?}", x.shape(), gamma.shape(), beta.shape()),
        ));
    }
    Ok((x.dim(0), x.dim(1)))
}

pub fn batchnorm_train<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (n, d) = check(x, gamma, beta)?;
    if n < 2 {
        return Err(FgcnnError::Config(
            "batch normalization in train mode needs at least 2 rows".into(),
        ));
    }
    let nf = T::lit(n as f64);
    let xd = x.data();
    let mut mean = vec![T::zero(); d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(&xd[r * d..(r + 1) * d]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![T::zero(); d];
    for r in 0..n {
        for ((s, &v), &m) in var.iter_mut().zip(&xd[r * d..(r + 1) * d]).zip(&mean) {
            let c = v - m;
            *s += c * c;
        }
    }
    var.iter_mut().for_each(|s| *s /= nf);
    let eps = T::lit(eps);
    let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s + eps).sqrt()).collect();

    let mut xhat = Tensor::zeros(&[n, d]);
    let mut out = Tensor::zeros(&[n, d]);
    let (g, b) = (gamma.data(), beta.data());
    for r in 0..n {
        for c in 0..d {
            let h = (xd[r * d + c] - mean[c]) * inv_std[c];
            xhat.data_mut()[r * d + c] = h;
            out.data_mut()[r * d + c] = h * g[c] + b[c];
        }
    }
    Ok((
        out,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    ))
}

pub fn batchnorm_infer<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let (n, d) = check(x, gamma, beta)?;
    let eps = T::lit(eps);
    let scale: Vec<T> = stats
        .var
        .data()
        .iter()
        .zip(gamma.data())
        .map(|(&v, &g)| g / (v + eps).sqrt())
        .collect();
    let mut out = x.clone();
    let (mu, b) = (stats.mean.data(), beta.data());
    for r in 0..n {
        for c in 0..d {
            let v = &mut out.data_mut()[r * d + c];
            *v = (*v - mu[c]) * scale[c] + b[c];
        }
    }
    Ok(out)
}

pub struct BnGrads<T> {
    pub dx: Tensor<T>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

pub fn batchnorm_backward<T: Real>(
    dy: &Tensor<T>,
    cache: &BnCache<T>,
    gamma: &Tensor<T>,
) -> Result<BnGrads<T>> {
    if dy.shape() != cache.xhat.shape() {
        return Err(FgcnnError::shape(
            "batchnorm_backward",
            format!("dy {:?}, cache {:?}", dy.shape(), cache.xhat.shape()),
        ));
    }
    let (n, d) = (dy.dim(0), dy.dim(1));
    let nf = T::lit(n as f64);
    let (dyd, xh, g) = (dy.data(), cache.xhat.data(), gamma.data());
    let mut dgamma = Tensor::zeros(&[d]);
    let mut dbeta = Tensor::zeros(&[d]);
    for r in 0..n {
        for c in 0..d {
            dgamma.data_mut()[c] += dyd[r * d + c] * xh[r * d + c];
            dbeta.data_mut()[c] += dyd[r * d + c];
        }
    }
    // dxhat = dy * gamma; sums over rows reduce to dbeta*gamma and dgamma*gamma.
    let mut dx = Tensor::zeros(&[n, d]);
    for r in 0..n {
        for c in 0..d {
            let dxhat = dyd[r * d + c] * g[c];
            let sum_dxhat = dbeta.data()[c] * g[c];
            let sum_dxhat_xhat = dgamma.data()[c] * g[c];
            dx.data_mut()[r * d + c] =
                cache.inv_std[c] / nf * (nf * dxhat - sum_dxhat - xh[r * d + c] * sum_dxhat_xhat);
        }
    }
    Ok(BnGrads { dx, dgamma, dbeta })
}

/// Mode-dispatching entry point. Train mode updates `stats` in place and
/// returns the backward cache.
pub fn batchnorm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mode: BnMode,
    stats: &mut RunningStats<T>,
) -> Result<(Tensor<T>, Option<BnCache<T>>)> {
    match mode {
        BnMode::Train => {
            let (y, cache) = batchnorm_train(x, gamma, beta, BN_EPS)?;
            stats.update(&cache, BN_MOMENTUM);
            Ok((y, Some(cache)))
        }
        BnMode::Infer => Ok((batchnorm_infer(x, gamma, beta, stats, BN_EPS)?, None)),
    }
}
