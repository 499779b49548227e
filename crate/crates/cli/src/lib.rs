//! Library side of the `nllab` command: config parsing, run and sweep
//! drivers, and readers for the artifacts a run leaves behind.

pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::{parse_config, parse_config_str, parse_override};
pub use error::{CliError, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK};
pub use run::{cmd_run, cmd_sweep, RunSummary, SweepAxis};
