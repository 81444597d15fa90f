pub mod branching;
pub mod brownian;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod lln;
pub mod moments;
pub mod quadrature;
pub mod rng;
pub mod sim;
pub mod special;
pub mod stats;
pub mod test_function;

pub use error::{Error, Result};
