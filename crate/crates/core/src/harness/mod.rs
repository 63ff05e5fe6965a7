//! Experiment plumbing: datasets, configuration, checkpoints and reports.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod report;
