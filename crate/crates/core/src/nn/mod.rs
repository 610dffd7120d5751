//! A minimal dense tensor toolkit with hand-written backward passes.

pub mod attention;
pub mod blocks;
pub mod embed;
pub mod gradcheck;
pub mod layers;
mod params;
mod tensor;

pub use attention::{AttentionConfig, MaskMode, MultiHeadAttention};
pub use params::{adam_step, AdamConfig, Grads, Param, ParamId, ParameterStore};
pub use tensor::Tensor;

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse(pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    let n = pred.len().max(1) as f64;
    let diff = pred.zip_map(target, |p, t| p - t);
    let loss = diff.sum_squares() / n;
    (loss, diff.map(|d| 2.0 * d / n))
}
