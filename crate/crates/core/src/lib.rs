//! Multimodal cognitive-load assessment: audio and video frontends,
//! augmentation, the two-stream model, training, evaluation and data tooling.

pub mod audio;
pub mod metrics;
pub mod augment;
pub mod config;
pub mod data;
pub mod dataset;
mod error;
pub mod model;
pub mod train;
pub mod video;

pub use error::{Error, Result};
