pub mod attention;
pub mod autograd;
pub mod cli;
pub mod cost;
pub mod losses;
pub mod metrics;
pub mod model;
mod error;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
