//! File formats, experiment orchestration and the `cbrnet` command line on
//! top of [`cbrnet_core`].

pub mod bundle;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod experiment;
pub mod manifest;
pub mod report;
pub mod text;

/// Crate version with the `git describe` of the build tree.
pub const VERSION: &str = env!("CBRNET_VERSION");

/// A malformed invocation or configuration. The command line exits with
/// status 2 for these and 1 for every other failure.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}
