//! Std companion to `matnet-core`: file formats, checkpoints, training
//! driver, benchmarking and the `matnet` command-line tool.

pub use matnet_core as core;

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod gantt;
pub mod report;
pub mod trainer;
