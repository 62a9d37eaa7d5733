//! Measurement toolkit for padding-induced position information in
//! convolutional networks.
//!
//! The crate builds up from a small deterministic CNN engine (NCHW `f32`
//! tensors, explicit padding, fixed op set) to an exact simulator of
//! "optimal" padding — running the same network without padding on an
//! oversized canvas and cropping onto the padded network's sampling grid —
//! and the metrics and experiments that quantify the positional pattern a
//! padding scheme leaves in the features.

pub mod alignment;
pub mod arch;
pub mod coord;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod harness;
mod hash;
pub mod metrics;
pub mod ops;
pub mod padding;
pub mod params;
pub mod pnm;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
