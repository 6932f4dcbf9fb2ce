use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Paths relative to the output directory.
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub parameters: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_path: String,
    /// SHA-256 of the config file bytes.
    pub config_hash: String,
    pub seed: u64,
    pub overrides: BTreeMap<String, String>,
    pub stages: Vec<Stage>,
}

pub fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn path(out: &Path) -> PathBuf {
        out.join(MANIFEST_FILE)
    }

    /// Existing manifest when it was written for the same config and seed, a fresh one otherwise.
    pub fn open(out: &Path, fresh: RunManifest) -> CliResult<RunManifest> {
        let path = Self::path(out);
        let Ok(text) = fs::read_to_string(&path) else {
            return Ok(fresh);
        };
        match serde_json::from_str::<RunManifest>(&text) {
            Ok(m) if m.config_hash == fresh.config_hash && m.seed == fresh.seed && m.overrides == fresh.overrides => {
                Ok(m)
            }
            Ok(_) => {
                log::warn!("{} belongs to another config; starting a new manifest", path.display());
                Ok(fresh)
            }
            Err(e) => Err(CliError::config(format!("{}: {e}", path.display()))),
        }
    }

    /// Replaces any earlier stage of the same name.
    pub fn record(&mut self, stage: Stage) {
        self.stages.retain(|s| s.name != stage.name);
        self.stages.push(stage);
    }

    pub fn stage(&self, name: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn save(&self, out: &Path) -> CliResult<()> {
        let path = Self::path(out);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    /// Referenced artifacts that do not exist below `out`.
    pub fn missing_artifacts(&self, out: &Path) -> Vec<String> {
        self.stages
            .iter()
            .flat_map(|s| s.inputs.iter().chain(&s.outputs))
            .filter(|p| !out.join(p).exists())
            .cloned()
            .collect()
    }
}
