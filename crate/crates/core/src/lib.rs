//! Simulation of high-order harmonic generation in gas jets.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coherence;
pub mod error;
pub mod propagation;
pub mod quadrature;
pub mod runner;
pub mod scenario;
pub mod sfa;
pub mod tables;
pub mod units;

pub use error::{Error, Result};
