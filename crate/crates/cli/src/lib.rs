//! The `ipdnet` command line: simulate datasets, train, infer, evaluate and plot.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod lock;
pub mod pipeline;
pub mod plot;

pub use commands::{run, Cli};
pub use error::{CliError, Result};
