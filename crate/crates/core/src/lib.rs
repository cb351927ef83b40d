pub mod autodiff;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod parallel;
pub mod synth;
pub mod training;

pub use error::{AutodiffError, Error, Result};
