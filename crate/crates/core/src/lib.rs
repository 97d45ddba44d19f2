//! Adaptive distributed kernel ridge regression (AdaDKRR) over simulated data silos.
//!
//! Every machine fits kernel ridge regression on its own shard. To pick a
//! regularization parameter it projects each candidate fit onto a shared
//! low-discrepancy kernel basis and only the basis coefficients leave the
//! machine. The averaged coefficients give a global approximation that each
//! machine validates against its own hold-out data.
//!
//! The crate also carries the two divide-and-conquer baselines (DKRR with
//! local cross-validation, and its logarithmically transformed variant), the
//! synthetic data generators, a schema-driven CSV ingestion pipeline, and the
//! experiment harness used by the `adadkrr` binary.

pub mod approx;
pub mod data;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod krr;
pub mod qmc;
pub mod seed;
pub mod select;
pub mod silo;

pub use error::{Error, Result};

/// Row-major view convention: every matrix of points stores one point per row.
pub type Points = nalgebra::DMatrix<f64>;
