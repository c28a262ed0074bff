//! Command-line harness around `lrm-core`: scenario files, output tables,
//! run manifests, the subcommand pipelines and the acceptance checks.

pub mod cli;
pub mod config;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod verify;
