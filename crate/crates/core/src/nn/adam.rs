use serde::{Deserialize, Serialize};

use crate::error::{FgcnnError, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a single parameter tensor. `step` is the
/// 1-based index of this update.
pub fn adam_step<T: Real>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    hyper: &AdamHyper,
) -> Result<()> {
    if param.len() != grad.len() || m.len() != param.len() || v.len() != param.len() {
        return Err(FgcnnError::shape(
            "adam_step",
            format!(
                "param {} grad {} m {} v {}",
                param.len(),
                grad.len(),
                m.len(),
                v.len()
            ),
        ));
    }
    let b1 = T::lit(hyper.beta1);
    let b2 = T::lit(hyper.beta2);
    let one = T::one();
    let bc1 = T::lit(1.0 - hyper.beta1.powi(step as i32));
    let bc2 = T::lit(1.0 - hyper.beta2.powi(step as i32));
    let lr = T::lit(hyper.lr);
    let eps = T::lit(hyper.eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Moment estimates for an ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub hyper: AdamHyper,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(hyper: AdamHyper, params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (p.zeros_like(), p.zeros_like()))
            .unzip();
        AdamState { hyper, t: 0, m, v }
    }

    /// Advance the step counter and update every parameter. `skip[i]` leaves
    /// parameter `i` and its moments untouched.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[&Tensor<T>],
        skip: &[bool],
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(FgcnnError::shape(
                "AdamState::step",
                format!(
                    "{} params, {} grads, {} slots",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        self.t += 1;
        for (i, p) in params.iter_mut().enumerate() {
            if skip.get(i).copied().unwrap_or(false) {
                continue;
            }
            adam_step(
                p.data_mut(),
                grads[i].data(),
                self.m[i].data_mut(),
                self.v[i].data_mut(),
                self.t,
                &self.hyper,
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameter() {
        let hyper = AdamHyper::with_lr(0.1);
        let mut p = vec![1.5f64, -2.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        for t in 1..=100 {
            adam_step(&mut p, &[0.0, 0.0], &mut m, &mut v, t, &hyper).unwrap();
        }
        assert_eq!(p, vec![1.5, -2.0]);
    }

    /// Scalar Adam written out directly, used as the oracle.
    fn scalar_recursion(x0: f64, target: f64, lr: f64, steps: u64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * (x - target);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        x
    }

    #[test]
    fn converges_on_quadratic() {
        let target = 3.0;
        let oracle = scalar_recursion(0.0, target, 0.1, 200);
        assert!((oracle - target).abs() < 1e-3);

        let hyper = AdamHyper::with_lr(0.1);
        let (mut x, mut m, mut v) = (vec![0.0f64], vec![0.0], vec![0.0]);
        for t in 1..=200 {
            let g = [2.0 * (x[0] - target)];
            adam_step(&mut x, &g, &mut m, &mut v, t, &hyper).unwrap();
        }
        assert!((x[0] - oracle).abs() < 1e-12);
        assert!((x[0] - target).abs() < 1e-3);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let run = || {
            let w = Tensor::<f32>::from_vec(&[3], vec![0.3, -0.1, 0.7]).unwrap();
            let mut state = AdamState::new(AdamHyper::default(), [&w]);
            let mut w = w.clone();
            for i in 0..50 {
                let g = Tensor::from_vec(&[3], vec![0.1 * i as f32, -0.2, 0.05]).unwrap();
                state.step(&mut [&mut w], &[&g], &[]).unwrap();
            }
            (w, state)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a.data(), b.data());
        assert_eq!(sa, sb);
    }

    #[test]
    fn skipped_parameters_are_frozen() {
        let a = Tensor::<f64>::full(&[2], 1.0);
        let b = Tensor::<f64>::full(&[2], 1.0);
        let mut state = AdamState::new(AdamHyper::with_lr(0.1), [&a, &b]);
        let (mut a, mut b) = (a.clone(), b.clone());
        let g = Tensor::full(&[2], 1.0);
        state.step(&mut [&mut a, &mut b], &[&g, &g], &[false, true]).unwrap();
        assert!(a.data()[0] < 1.0);
        assert_eq!(b.data(), &[1.0, 1.0]);
    }
}
