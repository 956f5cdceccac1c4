//! Bayesian single-view depth workbench.
//!
//! Uncertainty-aware depth losses (supervised, photometric self-supervised
//! and teacher-student), deep-ensemble fusion, depth and calibration metrics,
//! and a procedural colon renderer used to exercise all of them.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod imagery;
pub mod losses;
pub mod metrics;
pub mod photometry;
pub mod predictor;
pub mod rng;
pub mod synthcolon;
pub mod trainer;

pub use error::{Error, PfmError, Result};
