use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::Config;

/// Provenance record written once per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Config,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn start(command: &str, config: &Config) -> Self {
        let t = now();
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: config.clone(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix_s: t,
            finished_unix_s: t,
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.into(), value);
        self
    }

    pub fn input(&mut self, p: &Path) -> &mut Self {
        self.inputs.push(p.display().to_string());
        self
    }

    pub fn output(&mut self, p: &Path) -> &mut Self {
        self.outputs.push(p.display().to_string());
        self
    }

    /// Write to `path`, or to stderr when there is no output location.
    pub fn finish(mut self, path: Option<PathBuf>) -> std::io::Result<()> {
        self.finished_unix_s = now();
        let json = serde_json::to_string_pretty(&self).map_err(std::io::Error::other)?;
        match path {
            Some(p) => std::fs::write(p, json + "\n"),
            None => {
                eprintln!("{json}");
                Ok(())
            }
        }
    }
}

/// Manifest location for a run writing a single file: `<file>.manifest.json`.
pub fn beside(file: &Path) -> PathBuf {
    let mut name = file.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    file.with_file_name(name)
}
