//! Configuration, pipeline orchestration and run manifests for the
//! `pm-robopt` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{run_command, scenario_tag, Command, RunError, StageError};
pub use config::{parse_config, parse_str, ConfigError, RunConfig};
pub use manifest::{RunManifest, MANIFEST_FILE};
