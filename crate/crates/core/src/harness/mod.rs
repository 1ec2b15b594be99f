//! Evaluation harness: schedules, reference solutions, metrics and the
//! experiment drivers used by the CLI and the acceptance suite.

pub mod config;
pub mod convergence;
pub mod equivalence;
pub mod metrics;
pub mod reference;
pub mod run;
pub mod schedule;
pub mod stability;
