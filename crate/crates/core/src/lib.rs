//! Aspect-category sentiment analysis with sparse attention over elementary
//! discourse units (EDUs).

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod segment;
pub mod sentence;
pub mod sparsemax;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use labels::Polarity;
pub use tensor::Tensor;
