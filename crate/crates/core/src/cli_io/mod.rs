//! Scenario files, subcommands, CSV and JSON sinks, and binary snapshots.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod snapshot;
pub mod tables;

pub use commands::{run_command, Cli, Command};
pub use config::{parse_scenario, parse_scenario_with, ParsedScenario};
pub use manifest::RunManifest;
pub use snapshot::{read_snapshot, write_snapshot, Snapshot, SnapshotKind};
