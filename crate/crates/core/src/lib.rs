//! Multimodal abstractive summarization: frozen per-frame visual features fused
//! into a transformer encoder-decoder through cross-modal attention at one
//! encoder layer.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); aliases for
//! both widths are provided below.

pub mod cli;
pub mod config;
pub mod data;
pub mod decoding;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod scalar;
pub mod tokenizer;
pub mod training;

pub use config::RunConfig;
pub use error::{Error, FeatureFileError, Result};
pub use model::{ClipSum, Example, FrameFeatureSequence, ModelConfig, VisualInput};
pub use numerics::{Tape, Tensor};
pub use scalar::{DType, Scalar};
pub use tokenizer::{TokenId, TokenSequence, Vocab};
pub use training::TrainConfig;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type ClipSum32 = model::ClipSum<f32>;
pub type ClipSum64 = model::ClipSum<f64>;
pub type Example32 = model::Example<f32>;
pub type Example64 = model::Example<f64>;
pub type Checkpoint32 = training::Checkpoint<f32>;
pub type Checkpoint64 = training::Checkpoint<f64>;
