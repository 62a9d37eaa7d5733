//! Run configuration, checkpoint persistence, and measurement data sources.

pub mod checkpoint;
pub mod config;
pub mod data;

pub use checkpoint::Checkpoint;
pub use config::{DatasetSpec, RunConfig, TrainConfig};
pub use data::ImageSource;
