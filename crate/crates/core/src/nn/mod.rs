//! Minimal dense network engine.
//!
//! Parameters live in one flat vector. For each layer, in order, the weight
//! matrix (shape `out × in`, row-major) is followed by the bias vector, so
//! gradients, updates and Jacobian rows all share one stable index space.

mod matrix;
mod mlp;
mod optim;

pub(crate) use matrix::argmax;
pub use matrix::Matrix;
pub(crate) use mlp::is_one_hot;
pub use mlp::{
    ce_grad, finite_diff_grad, forward_logits, forward_logits_with, init_model, mean_ce_loss, softmax, softmax_row, vjp_logits, Batch,
    Gradient, MlpSpec, Model,
};
pub use optim::{OptimizerKind, OptimizerState, Update};
