//! Lightweight single-shot thermal pedestrian detector.
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod imaging;
pub mod model;
pub mod postprocess;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorClass, Result};
