//! Command-line tool, file formats and study runner for time-varying-effect
//! multiple imputation.

pub mod cli;
pub mod config;
pub mod csvio;
pub mod error;
pub mod report;
pub mod runner;
