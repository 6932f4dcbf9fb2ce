use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sde_opinf::bench::experiment::{EvaluationMode, ExperimentConfig};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<EvaluationMode>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
    pub overrides: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse_config(text: &str) -> CliResult<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))?;
    cfg.validate().map_err(|e| CliError::config(format!("config: {e}")))?;
    Ok(cfg)
}

pub fn load(path: &Path, ov: &Overrides) -> CliResult<LoadedConfig> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::config(format!("config file {} not found", path.display())),
        _ => CliError::config(format!("{}: {e}", path.display())),
    })?;
    let text = std::str::from_utf8(&bytes).map_err(|_| CliError::config("config is not UTF-8"))?;
    let mut config = parse_config(text)?;
    let mut overrides = BTreeMap::new();
    if let Some(mode) = ov.mode {
        config.evaluation.mode = mode;
        overrides.insert("evaluation.mode".into(), format!("{mode:?}").to_lowercase());
    }
    if let Some(seed) = ov.seed {
        config.benchmark.seed = seed;
        overrides.insert("benchmark.seed".into(), seed.to_string());
    }
    Ok(LoadedConfig {
        config,
        hash: sha256_hex(&bytes),
        overrides,
    })
}
