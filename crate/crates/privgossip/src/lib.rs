//! File formats, config parsing and the command implementations behind the
//! `privgossip` binary.

pub mod commands;
pub mod config;
pub mod formats;

pub use commands::{cmd_attack, cmd_baseline, cmd_run, cmd_sweep, Invocation};
pub use config::{emit_config, parse_config, parse_config_str, ConfigError, ExperimentConfig, RoleSpec};
