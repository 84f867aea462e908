pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod predictor;
pub mod recon;
pub mod relation;
pub mod rng;
pub mod scalar;
pub mod social;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
