//! Neural operators for stochastic differential equations: Brownian path
//! generation, reference solvers, a small reverse-mode autodiff engine, a
//! recurrent DeepONet, training, evaluation and a command line front end.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autograd;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod net;
pub mod paths;
pub mod solvers;
pub mod training;

pub use error::{Error, Result};
