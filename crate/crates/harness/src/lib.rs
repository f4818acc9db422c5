//! Experiment harness for random-learning-rate SGD: configuration, training
//! runs and sweeps with manifests, and the analysis commands behind the
//! `rlr` binary.

pub mod analysis;
pub mod config;
pub mod error;
pub mod experiment;
pub mod run;
pub mod stats;

pub use config::Config;
pub use error::{HarnessError, Result};
