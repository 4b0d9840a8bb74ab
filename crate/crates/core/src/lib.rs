//! Causality-based feature rectification (CFR) for linear models that stay
//! stable under agnostic distribution shift.
//!
//! The crate bundles a biased-environment data generator, the rectifier and
//! its regressor/classifier trainers, classical baselines, stability metrics
//! and a repeatable experiment harness.

pub mod classifier;
pub mod datagen;
pub mod error;
pub mod exec;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod rectifier;
pub mod regressors;

pub use error::{CfrError, Result};
pub use exec::Execution;
