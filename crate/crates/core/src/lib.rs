pub mod cli;
pub mod degradation;
pub mod diagnostics;
pub mod ekp;
pub mod em;
pub mod error;
pub mod generator;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod pattern;
pub mod tensor;

pub use error::{Error, Result};
