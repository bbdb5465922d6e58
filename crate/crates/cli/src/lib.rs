//! Configuration, command orchestration and report files for the `kesten`
//! binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::RunConfig;
pub use error::CliError;
pub use output::{ResultBundle, Table};

/// Runs every acceptance criterion and bundles the verdicts.
pub fn cmd_reproduce(master_seed: u64) -> (ResultBundle, Vec<acceptance::Outcome>) {
    let outcomes = acceptance::run_all(master_seed);
    let mut bundle = ResultBundle::new("reproduce", None, master_seed);
    bundle.tables.push(acceptance::summary_table(&outcomes));
    bundle.tables.push(acceptance::values_table(&outcomes));
    (bundle, outcomes)
}
