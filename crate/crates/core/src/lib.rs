//! Petrov-Galerkin least-squares solver with random-feature trial spaces.

#![allow(clippy::needless_range_loop)]

pub mod assembly;
pub mod error;
pub mod experiment;
pub mod expr;
pub mod feature_basis;
pub mod lstsq;
pub mod mesh;
pub mod metrics;
pub mod probe;
pub mod problems;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
