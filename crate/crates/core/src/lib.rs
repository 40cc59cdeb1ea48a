//! Self-contained training and inference engine for Chinese intent
//! classification.
//!
//! The model integrates character-level features into word embeddings: a
//! window convolution over character embeddings is max-pooled per word and
//! averaged elementwise with the word embedding, and the integrated
//! sequence feeds a gated recurrent classifier with a linear softmax head.
//! Ensembles retrain the same architecture under different seeds and
//! combine predictions by majority vote. All numerics are 64-bit floats on
//! a hand-rolled reverse-mode tape; no external ML framework is involved.

pub mod embedding;
pub mod ensemble;
pub mod error;
pub mod lstm;
pub mod metrics;
pub mod model;
pub mod serialize;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
