//! `manifest.json`: what a run did, enough to repeat it.
//!
//! Everything except `timestamps` is a function of the inputs, so two runs
//! with the same config and seeds produce manifests that differ only there.

use std::path::Path;
use std::time::SystemTime;

use anyhow::Result;
use serde::Serialize;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct Timestamps {
    pub started: String,
    pub finished: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<C: Serialize, S: Serialize> {
    pub command: String,
    pub version: String,
    /// The resolved configuration; feeding it back as `--config` reruns
    /// the command.
    pub config: C,
    pub seeds: S,
    pub notes: Vec<String>,
    pub outputs: Vec<String>,
    pub timestamps: Timestamps,
}

pub fn now() -> String {
    humantime::format_rfc3339_seconds(SystemTime::now()).to_string()
}

impl<C: Serialize, S: Serialize> Manifest<C, S> {
    pub fn new(command: &str, config: C, seeds: S, started: String) -> Self {
        Self {
            command: command.to_string(),
            version: crate::VERSION.to_string(),
            config,
            seeds,
            notes: Vec::new(),
            outputs: Vec::new(),
            timestamps: Timestamps {
                finished: started.clone(),
                started,
            },
        }
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.timestamps.finished = now();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(())
    }
}
