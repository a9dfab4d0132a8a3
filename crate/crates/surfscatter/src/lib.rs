//! Experiment driver for `surfscatter-core`: configuration, subcommands,
//! CSV/SVG artifacts with a checksummed manifest, and the acceptance suite.

pub mod acceptance;
pub mod cli;
pub mod commands;
pub mod config;
pub mod output;

pub use cli::run;
