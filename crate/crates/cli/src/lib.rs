//! Command line and HTTP front ends for `permtdp`.

pub mod args;
pub mod commands;
pub mod error;
pub mod input;
pub mod service;

pub use commands::dispatch;
pub use error::{CliError, EXIT_FAILURE, EXIT_USAGE};
