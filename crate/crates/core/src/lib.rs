//! Tiny-corpus BERT pre-training experiments: WordPiece tokenization,
//! token-filtered pre-training subsets, a small encoder with an optional
//! convolutional front-end, MLM pre-training, fine-tuning and soft
//! committees.

pub mod committee;
pub mod corpus;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod scalar;
pub mod tokenizer;
pub mod train;

pub use scalar::{DType, Scalar};

/// Training precision.
pub type Tensor32 = numerics::Tensor<f32>;
/// Verification precision.
pub type Tensor64 = numerics::Tensor<f64>;
pub type Tape32 = numerics::Tape<f32>;
pub type Tape64 = numerics::Tape<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Committee32 = committee::Committee<f32>;
pub type Checkpoint32 = model::Checkpoint<f32>;
