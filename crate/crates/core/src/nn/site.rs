//! Layers bound to entries of a [`TensorStore`].

use crate::error::Result;
use crate::nn::batchnorm::{
    batchnorm_backward, batchnorm_infer, batchnorm_train, BnCache, BnMode, RunningStats, BN_EPS,
    BN_MOMENTUM,
};
use crate::nn::dense::{affine, affine_backward};
use crate::nn::init::glorot;
use crate::store::{Handle, TensorStore};
use crate::tensor::{Real, Tensor};

/// Affine map `x·W + b` with Glorot-initialized `W` and zero `b`. Layers
/// feeding batch normalization have no `b`; the BN shift takes its place.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseSite {
    pub w: Handle,
    pub b: Option<Handle>,
    pub d_in: usize,
    pub d_out: usize,
}

impl DenseSite {
    pub fn alloc<T: Real>(
        params: &mut TensorStore<T>,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        seed: u64,
    ) -> Self {
        let wname = format!("{prefix}.weight");
        let w = params.push(wname.clone(), glorot(&[d_in, d_out], d_in, d_out, seed, &wname));
        let b = bias.then(|| params.push(format!("{prefix}.bias"), Tensor::zeros(&[d_out])));
        DenseSite { w, b, d_in, d_out }
    }

    pub fn forward<T: Real>(&self, params: &TensorStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self.b {
            Some(b) => affine(x, params.get(self.w), params.get(b)),
            None => affine(x, params.get(self.w), &Tensor::zeros(&[self.d_out])),
        }
    }

    /// Accumulates `dW`, `db` into `grads` and returns `dx`.
    pub fn backward<T: Real>(
        &self,
        params: &TensorStore<T>,
        grads: &mut TensorStore<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let g = affine_backward(x, params.get(self.w), dy)?;
        grads.get_mut(self.w).add_assign(&g.dw)?;
        if let Some(b) = self.b {
            grads.get_mut(b).add_assign(&g.db)?;
        }
        Ok(g.dx)
    }
}

/// Batch normalization with learned `gamma`/`beta` in the parameter store and
/// running statistics in a separate state store.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnSite {
    pub gamma: Handle,
    pub beta: Handle,
    pub mean: Handle,
    pub var: Handle,
    pub dim: usize,
}

impl BnSite {
    pub fn alloc<T: Real>(
        params: &mut TensorStore<T>,
        state: &mut TensorStore<T>,
        prefix: &str,
        dim: usize,
    ) -> Self {
        let stats = RunningStats::<T>::new(dim);
        BnSite {
            gamma: params.push(format!("{prefix}.gamma"), Tensor::full(&[dim], T::one())),
            beta: params.push(format!("{prefix}.beta"), Tensor::zeros(&[dim])),
            mean: state.push(format!("{prefix}.running_mean"), stats.mean),
            var: state.push(format!("{prefix}.running_var"), stats.var),
            dim,
        }
    }

    pub fn forward<T: Real>(
        &self,
        params: &TensorStore<T>,
        state: &TensorStore<T>,
        x: &Tensor<T>,
        mode: BnMode,
    ) -> Result<(Tensor<T>, Option<BnCache<T>>)> {
        let (g, b) = (params.get(self.gamma), params.get(self.beta));
        match mode {
            BnMode::Train => {
                let (y, cache) = batchnorm_train(x, g, b, BN_EPS)?;
                Ok((y, Some(cache)))
            }
            BnMode::Infer => {
                let stats = RunningStats {
                    mean: state.get(self.mean).clone(),
                    var: state.get(self.var).clone(),
                };
                Ok((batchnorm_infer(x, g, b, &stats, BN_EPS)?, None))
            }
        }
    }

    pub fn backward<T: Real>(
        &self,
        params: &TensorStore<T>,
        grads: &mut TensorStore<T>,
        dy: &Tensor<T>,
        cache: &BnCache<T>,
    ) -> Result<Tensor<T>> {
        let g = batchnorm_backward(dy, cache, params.get(self.gamma))?;
        grads.get_mut(self.gamma).add_assign(&g.dgamma)?;
        grads.get_mut(self.beta).add_assign(&g.dbeta)?;
        Ok(g.dx)
    }

    /// Folds the batch statistics of a train-mode pass into the running ones.
    pub fn commit<T: Real>(&self, state: &mut TensorStore<T>, cache: &BnCache<T>) {
        let mut stats = RunningStats {
            mean: state.get(self.mean).clone(),
            var: state.get(self.var).clone(),
        };
        stats.update(cache, BN_MOMENTUM);
        *state.get_mut(self.mean) = stats.mean;
        *state.get_mut(self.var) = stats.var;
    }
}
