//! Tensors, reverse-mode differentiation and the optimizer.

pub mod adam;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var};
pub(crate) use tape::log_sum_exp;
pub use tensor::{Mask, Tensor};

/// Layer-normalization epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;
