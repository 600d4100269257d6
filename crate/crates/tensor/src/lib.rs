//! Minimal dense tensor engine with reverse-mode differentiation.
//!
//! Storage is row-major `f32` without strides. Ops record a backward closure
//! when any input is tracked; [`Tensor::backward`] walks the recorded graph in
//! reverse topological order and accumulates into tracked leaves.

mod error;
pub mod gradcheck;
mod nn;
mod ops;
pub mod optim;
pub mod rng;
mod store;
mod tensor;

pub use error::{Result, TensorError};
pub use nn::{gelu_scalar, GELU_CUBIC, GELU_SQRT_2_OVER_PI, IGNORE_INDEX};
pub use optim::{clip_grad_norm, AdamW, AdamWConfig, LrSchedule};
pub use store::{ParamId, VarStore};
pub use tensor::{is_checked, set_checked, Tensor};

/// `x · w + b` for `x[n×in]`, `w[in×out]`, `b[out]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    x.matmul(weight)?.add_row(bias)
}
