//! Experiment runner for descriptor-parametrised multi-domain learning.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

pub use error::CliError;
