//! Experiment runner: configuration, episode loop, training pipeline and
//! file formats behind the `cilp` binary.

pub mod catalog;
pub mod config;
pub mod episode;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod traces;

pub use error::CliError;
