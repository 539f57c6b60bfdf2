//! Command-line frontend for two-party training and prediction.
//!
//! The library half exists so integration tests can call into the same
//! code paths the binary uses: config parsing, data ingestion, share
//! files, the framed transport, and the subcommand drivers.

pub mod commands;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model_config;
pub mod net;
pub mod share_files;
