//! Subcommand implementations.

pub mod bench;
pub mod circuit_stats;
pub mod common;
pub mod predict;
pub mod share_data;
pub mod train_plain;
pub mod train_secure;
