//! Causal multi-scale embedding smoothing for GPT-style decoders.
//!
//! Half of every inter-block embedding is replaced by a causal, Haar-style
//! moving average whose length grows with the coordinate index; the rest of
//! the crate is the minimal machinery needed to train and measure such a
//! model from scratch: a reverse-mode tape, the decoder, synthetic corpora
//! with exact likelihood floors, and the training loop.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod model;
pub mod tensor;
pub mod train;
pub mod verify;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::Tensor;
