//! Elementwise activations with their derivatives.

use crate::tensor::Real;

pub fn tanh<T: Real>(x: T) -> T {
    x.tanh()
}

/// d tanh / dx expressed through the forward output `y = tanh(x)`.
pub fn tanh_grad_from_output<T: Real>(y: T) -> T {
    T::one() - y * y
}

pub fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Subgradient 0 at the kink.
pub fn relu_grad<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

/// Branch form: never evaluates `exp` of a large positive argument.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() - s)
}
