//! Command-line front end: model files, command runners and CSV output.

pub mod args;
pub mod commands;
pub mod error;
pub mod model;
pub mod values;

pub use args::Cli;
pub use commands::{execute, RunOutput};
pub use error::CliError;
pub use model::{Model, ModelFile};
