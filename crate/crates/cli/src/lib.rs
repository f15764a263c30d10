//! Experiment driver: simulate, cluster, solve and audit from the command line.

pub mod commands;
pub mod config;
pub mod pipeline;
