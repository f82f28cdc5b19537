//! Multi-domain multi-task learning with tensor-factorised weight generators.

pub mod dataset;
pub mod descriptors;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod model;
pub mod multi;
pub mod persist;
pub mod regularizers;
pub mod single;
pub mod svd;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod zero_shot;

pub use error::{Error, Result};
