//! Scenario runner for `phjb-core`: reads a JSON scenario, runs the declared
//! verification checks and emits a JSON or CSV report.
//!
//! Sampled checks use the ChaCha8 generator; check `i` is seeded with
//! `seed + i`, so a report is reproducible across platforms.

// `!(x <= y)` is used on purpose so that NaN fails the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decimal;
pub mod error;
pub mod report;
pub mod runner;
pub mod scenario;

pub use decimal::Decimal;
pub use error::CliError;
pub use report::{emit_report, CheckRecord, Format, Report};
pub use runner::{execute, run_scenario, run_text};
pub use scenario::{Check, CheckKind, Overrides, Plan, Scenario};
