//! Library side of the `fedsim` command: config parsing and the subcommands.
//!
//! Exit statuses: 0 success, 2 invalid configuration, 3 I/O or data-file
//! problems (including an existing output path), 4 numerical divergence,
//! 1 anything else.

pub mod commands;
pub mod config;

pub use commands::{cmd_inspect_partition, cmd_pretrain, cmd_run, CliError};
pub use config::{load_config, parse_config, ConfigError, ExperimentConfigFile};
