//! Multi-class anomaly detection.
//!
//! When the normal population spans several known categories there are
//! three ways to build a detector from one-class components, all provided
//! here on top of a small dense-network engine:
//!
//! * fuse per-category hypersphere detectors with Dempster-Shafer
//!   combination ([`multiclass::train_algorithm1`]),
//! * train a single hypersphere detector on the pooled categories
//!   ([`multiclass::train_algorithm2`]),
//! * DeepMAD: per-category encoders that also push the other normal
//!   categories beyond a margin, scored by minimum center distance
//!   ([`multiclass::train_deepmad`]).
//!
//! [`eval`] holds the ROC/AUC harness used to compare them.

pub mod config;
pub mod data;
pub mod detectors;
mod error;
pub mod eval;
pub mod fusion;
pub mod multiclass;
pub mod nn;

pub use error::{Error, Result};
