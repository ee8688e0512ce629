//! Experiment harness for the exponential collocation integrators:
//! configuration, run/convergence/energy studies, CSV and JSON artifacts,
//! and the `expocol` CLI built on top.

pub mod config;
pub mod csvio;
mod error;
pub mod fit;
pub mod runner;

pub use error::{HarnessError, Result};
