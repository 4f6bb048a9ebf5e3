pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod loss;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
