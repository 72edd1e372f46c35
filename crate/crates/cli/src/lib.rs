//! Configuration, checkpoint container and subcommands of the `ujscc` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;

pub use checkpoint::Checkpoint;
pub use config::{DatasetSpec, RunConfig};
