//! Command-line harness for fedguard experiments: config parsing, paired
//! fedavg/secure runs, and metrics export.

pub mod config;
pub mod runner;
