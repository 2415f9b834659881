//! Audio-visual segmentation transformer built on a small reverse-mode
//! autodiff core, plus a synthetic "sounding shapes" dataset, training
//! harness and metrics.

mod codec;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod render;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
