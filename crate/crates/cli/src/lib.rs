//! Command-line front end: file formats, experiment suites and subcommands.

pub mod commands;
pub mod error;
pub mod experiment;
pub mod noise_file;
