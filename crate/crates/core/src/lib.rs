pub mod cli;
pub mod data_pipeline;
mod error;
pub mod evaluation;
pub mod losses;
pub mod models;
pub mod trainer;

pub use error::{Error, Result};
