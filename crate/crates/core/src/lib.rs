//! Wavelet thresholding goodness-of-fit tests for volatility-like processes.
//!
//! The pipeline turns a price path into observations `Y_i`, fits a parametric
//! model for their mean, normalises, takes a Haar decomposition of the
//! normalised values and tests with the maximum absolute coefficient.

pub mod cli;
pub mod error;
pub mod estimation;
pub mod expr;
pub mod harness;
pub mod model;
pub mod observers;
pub mod sim;
pub mod testing;
pub mod wavelet;

pub use error::{Error, Result};
