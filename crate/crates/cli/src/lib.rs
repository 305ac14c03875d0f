//! Experiment runner for the `taskcomm` library: TOML configuration, staged
//! pipelines with on-disk artifacts, sweeps, result files and the property
//! checks behind `taskcomm selftest` and the acceptance suite.

pub mod checks;
pub mod cli;
pub mod commands;
pub mod config;
pub mod output;
pub mod pipeline;
