//! Dense `N×C×H×W` tensors and a small reverse-mode autodiff tape.
//!
//! Everything is generic over [`Scalar`] so the same network code runs in
//! `f32` for training and in `f64` for finite-difference verification.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod scalar;
pub mod tensor;

#[cfg(test)]
mod testing;

pub use error::{Result, TensorError};
pub use graph::{Backward, BackwardCtx, Gradients, Var};
pub use ops::{BatchStats, ConvSpec};
pub use scalar::{gemm, Scalar, Transpose};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Var32 = Var<f32>;
pub type Var64 = Var<f64>;
