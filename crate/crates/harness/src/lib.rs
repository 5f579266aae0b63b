//! Experiment harness: configuration, Monte-Carlo runs and report output.

pub mod config;
pub mod error;
pub mod experiment;
pub mod report;

pub use error::{HarnessError, Result};
