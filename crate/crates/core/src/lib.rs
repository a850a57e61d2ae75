pub mod cli;
pub mod error;
pub mod fields;
pub mod fraccalc;
pub mod linops;
pub mod paths;
pub mod solver;
pub mod stability;

pub use error::{Error, Result};
