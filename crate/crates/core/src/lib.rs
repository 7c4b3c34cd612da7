//! Fairness auditing with balanced synthetic cohorts.
//!
//! The pipeline renders a balanced attribute grid into a seeded manifest,
//! trains a small conditional rectified-flow generator, samples one image per
//! manifest row with classifier-free guidance, runs pluggable classifiers over
//! the images and reports per-attribute demographic parity (max minus min
//! subgroup accuracy).
//!
//! Every random draw is derived from a single master seed through
//! [`cohort::seed_mix`], so stages can be re-run in isolation or in parallel
//! and still produce byte-identical artifacts.

pub mod adapters;
pub mod cohort;
pub mod config;
pub mod error;
pub mod fairmetrics;
pub mod flowgen;
pub mod lesionworld;
pub mod numkit;
pub mod pipeline;

pub use error::{Error, Result};

/// Version string embedded in every artifact the harness writes.
pub const HARNESS_VERSION: &str = env!("CARGO_PKG_VERSION");
