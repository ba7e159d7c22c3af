//! Block movement pruning, knowledge distillation and emulated mixed
//! precision for a small transformer text classifier, with a latency,
//! energy and accuracy report.
//!
//! Everything is built on a small reverse-mode tensor library in
//! [`tensor`]. Values are stored as `f64` and rounded to the tensor's
//! [`Dtype`](tensor::Dtype) after every operation, which is how f32 and
//! binary16 arithmetic are emulated.

pub mod amp;
pub mod bench;
pub mod data;
pub mod distill;
mod error;
pub mod experiment;
pub mod model;
pub mod pruning;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::checkpoint::Checkpoint;
pub use model::{ModelConfig, TransformerClassifier};
pub use tensor::{Dtype, Tensor};
