//! Numeric kernels shared by every layer: affine maps, activations,
//! batch normalization, dropout, Adam and the finite-difference oracle.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod dense;
pub mod dropout;
pub mod gradcheck;
pub mod init;
pub mod site;

pub use activation::{relu, relu_grad, sigmoid, tanh, tanh_grad_from_output};
pub use adam::{adam_step, AdamHyper, AdamState};
pub use batchnorm::{batchnorm, BnCache, BnMode, RunningStats};
pub use dense::{affine, affine_backward};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, Probe};
pub use site::{BnSite, DenseSite};
