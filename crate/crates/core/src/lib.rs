//! INSTINCT: neural-bandit optimization over a Sobol-projected discrete domain.

pub mod api;
pub mod domain;
pub mod error;
pub mod featuremap;
pub mod harness;
mod io;
pub mod neuralucb;
pub mod oracle;
pub mod seed;
pub mod surrogate;

pub use error::{Error, Result};
