//! FGCNN: convolutional feature generation for click-through-rate
//! prediction, with hand-derived gradients and a desk-scale study harness.

pub mod classifier;
pub mod data;
pub mod embedding;
pub mod error;
pub mod experiments;
pub mod featgen;
pub mod model;
pub mod nn;
pub mod store;
pub mod tensor;
#[cfg(test)]
mod testutil;
pub mod train;
pub mod verify;
