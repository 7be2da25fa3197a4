//! Command-line front end: configuration, the pipeline steps and the
//! argument parser.

pub mod cli;
pub mod config;
pub mod pipeline;

pub use cli::run;
