//! Experiment orchestration for the maxmargin library: TOML-configured
//! sweeps that run asymptotic predictions and simulations side by side and
//! write CSV tables.

// Guards are written as negated comparisons so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod report;
pub mod selftest;
pub mod table;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{HarnessError, Result};
pub use experiment::{run, Leg, RunOutcome};
pub use report::{compare_report, compare_tables};
