//! Frame-level multi-label detection of instrument playing techniques.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
