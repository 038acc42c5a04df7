//! Sparse variational Gaussian processes with interdomain and multioutput
//! inducing variables.
//!
//! Covariances between inducing variables and function values, and the
//! posterior conditionals built from them, are selected at run time by a
//! [`covariances::Dispatcher`] keyed on the (inducing variable, kernel) type
//! pair. New pairs can be registered without touching this crate.

pub mod conditionals;
pub mod covariances;
pub mod divergences;
pub mod error;
pub mod inducing;
pub mod kernels;
pub mod likelihoods;
pub mod models;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
