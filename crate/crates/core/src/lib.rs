//! Label-noise injection, label-error detection, evaluation and method ranking.

// `!(x > 0.0)` is how NaN gets rejected by the range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod detectors;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod neighbors;
pub mod noise;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
