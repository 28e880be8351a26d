//! Probabilistic dynamic security assessment.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boundary;
pub mod contingency;
pub mod dynsim;
pub mod error;
pub mod grid;
pub mod mc;
pub mod pipeline;
pub mod rng;
pub mod scenario;
pub mod screening;
pub mod sensitivity;

pub use error::{Error, Result};
