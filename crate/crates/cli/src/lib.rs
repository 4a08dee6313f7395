//! Command-line front end for training, evaluating and simulating learned
//! HJB value functions.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use checkpoint::Checkpoint;
pub use cli::{run, Cli, Command, Outcome};
pub use config::RunConfig;
pub use error::{exit, CliError, CliResult};
