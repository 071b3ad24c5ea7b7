//! Correlated Gaussian random symmetric matrices: samplers, spectra, exact
//! moment oracles, word combinatorics, and spiked-model fluctuations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod ensembles;
pub mod error;
pub mod fk;
pub mod fluctuations;
pub mod harness;
pub mod linear_ensemble;
pub mod matrix;
pub mod patterns;
pub mod pool;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod wick;

pub use error::{Error, Result};
