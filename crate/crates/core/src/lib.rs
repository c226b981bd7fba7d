//! Multimodal neural machine translation with separate source and image attention.
//!
//! A bidirectional GRU encoder feeds a conditional GRU decoder that
//! attends separately to source annotations and to a grid of spatial
//! image features, with a learned scalar gate on the image context.
//! Gradients come from a small reverse-mode tape over dense tensors.

pub mod attention;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod params;
pub mod search;
pub mod tape;
pub mod tensor;
pub mod training;
pub mod vision;

pub use error::{Error, Result, TensorError};
pub use model::{Model, ModelConfig};
pub use params::{ParamId, ParamSet};
pub use search::{beam_search, greedy_decode, Hypothesis};
pub use tape::{Tape, Var};
pub use tensor::{Precision, Real, Tensor};
