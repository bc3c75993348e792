pub mod domain;
pub mod error;
pub mod genetic;
pub mod harness;
pub mod metrics;
pub mod oneshot;
pub mod scoring;
pub mod separator;

pub use error::{Error, Result};
