//! Bayesian tensor product neural networks: additive models built from
//! products of sum-to-zero sigmoid factors, fitted by reversible-jump MCMC.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod bench;
pub mod data;
pub mod error;
pub mod inference;
pub mod likelihood;
pub mod mcmc;
pub mod prior;

pub use error::{Error, Result};
pub use inference::{fit, FitOutput};
