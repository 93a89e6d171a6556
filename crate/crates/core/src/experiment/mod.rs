//! Declarative experiment harness: config ingestion, seed sweeps, result
//! persistence, aggregation, verification suite, and plot emission.

pub mod aggregate;
pub mod config;
pub mod io;
pub mod plot;
pub mod runner;
pub mod verify;

pub use aggregate::AggregateSummary;
pub use config::ExperimentConfig;
pub use runner::{compare_arms, run_experiment};
pub use verify::{verify_suite, VerifyConfig, VerifyReport};
