//! Minimal differentiable tensor engine.
//!
//! The operator set is closed: convolution, pooling, nearest upsampling,
//! half instance normalization, attention building blocks (batched matmul,
//! softmax), pointwise nonlinearities, separable blurs and the reductions
//! used by the training losses. Every op has an exact backward pass that
//! [`gradcheck`] verifies against central differences.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use kernels::conv::{ConvSpec, PadMode};
pub use params::{Init, Param, ParamStore};
pub use scalar::Float;
pub use tensor::Tensor;
