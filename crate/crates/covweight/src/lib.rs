//! Covariate-informed p-value weighting for large-scale multiple testing.
//!
//! The crate computes per-test weights from an independent covariate and
//! feeds them to weighted Bonferroni or weighted Benjamini-Hochberg:
//!
//! - [`crw`]: covariate rank weights built on rank probabilities ([`rankprob`])
//! - [`gcw`]: Gaussian covariate weights and the Bayes-weight baseline
//! - [`dcw`]: data-driven group weights
//! - [`pipeline`]: end-to-end analysis of a p-value/covariate table
//! - [`sim`]: simulation designs for power, FDR and FWER
//! - [`validate`]: the acceptance checks shared by tests and the CLI

pub mod crw;
pub mod dcw;
pub mod effects;
pub mod error;
pub mod gcw;
pub mod math;
pub mod pipeline;
pub mod rankprob;
pub mod sim;
pub mod validate;

pub use error::{Error, Result};
