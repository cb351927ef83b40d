//! Minimal reverse-mode automatic differentiation in double precision.

mod gradcheck;
mod graph;
pub mod layers;
mod params;

pub use gradcheck::{grad_check, grad_check_params, relative_error, RELATIVE_ERROR_FLOOR};
pub use graph::{array, BatchStats, Graph, Tensor};
pub use params::{Bindings, ParamStore, Parameter};
