//! Experiment harness for GP-based model learning and Monte Carlo policy
//! optimization on partially measurable systems: configuration, file formats,
//! the trial loop, and policy evaluation. The `pmsrl` binary wraps this
//! library.

pub mod config;
pub mod error;
pub mod formats;
pub mod harness;

pub use config::ExperimentConfig;
pub use error::HarnessError;
