//! Command-line harness: configuration, experiments and run reports.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod report;
