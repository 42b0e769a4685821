pub mod basis;
pub mod benchmarks;
pub mod cli;
pub mod deviation;
pub mod error;
pub mod geometry;
pub mod grassmann;
pub mod regression;
pub mod sum;
pub mod surrogate;

pub use error::{Error, Result};
