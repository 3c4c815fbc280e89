//! File formats, study orchestration and the command-line front end for
//! `biaffine-core`.
//!
//! * [`problem`] reads and writes problem JSON files
//! * [`tables`] holds the CSV tables (traces, condition records, convergence runs)
//! * [`config`] merges study flags with `--config` files
//! * [`study`] has the parallel runners and output writers
//! * [`cli`] defines the subcommands

pub mod cli;
pub mod config;
pub mod error;
pub mod problem;
pub mod study;
pub mod tables;

pub use error::{CliError, CliResult};
