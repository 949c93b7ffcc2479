//! Reproduction pipeline behind the `acorn` binary: demonstration
//! generation, training, noisy evaluation, ablation sweeps and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use error::{CliError, CliResult};
