use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use urbanmon::model::Architecture;
use urbanmon::pipeline::PipelineParams;
use urbanmon::transfer::TransferConfig;

use crate::CliError;

/// Fully resolved run settings. Keys are flat in the JSON file; pipeline
/// and transfer settings sit next to the paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// `paper` (published defaults) or `desk` (small synthetic scenes).
    pub preset: String,
    /// Observation bundle directory.
    pub bundle: Option<PathBuf>,
    /// `labels.json` manifest.
    pub labels: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
    /// Filters of the five hidden layers.
    pub topology: [usize; 5],
    #[serde(flatten)]
    pub pipeline: PipelineParams,
    #[serde(flatten)]
    pub transfer: TransferConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset("paper").expect("known preset")
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self, CliError> {
        let transfer = match name {
            "paper" => TransferConfig::default(),
            "desk" => TransferConfig::desk(),
            other => return Err(CliError::Usage(format!("unknown preset '{other}' (expected paper or desk)"))),
        };
        Ok(Self {
            preset: name.to_string(),
            bundle: None,
            labels: None,
            run_dir: None,
            topology: [10, 10, 26, 26, 8],
            pipeline: PipelineParams::default(),
            transfer,
        })
    }

    /// Reads a config file over its preset. Unknown keys are rejected and
    /// relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let file: Map<String, Value> = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {} is not a JSON object: {e}", path.display())))?;
        let preset = file.get("preset").and_then(Value::as_str).unwrap_or("paper");
        let base = serde_json::to_value(Self::preset(preset)?).expect("config serializes");
        let Value::Object(mut merged) = base else { unreachable!("config is an object") };
        for (key, value) in file {
            if !merged.contains_key(&key) {
                return Err(CliError::Usage(format!("unknown config key '{key}' in {}", path.display())));
            }
            merged.insert(key, value);
        }
        let mut cfg: Self = serde_json::from_value(Value::Object(merged))
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        let root = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.bundle, &mut cfg.labels, &mut cfg.run_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::with_filters(self.topology)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    /// A configured path that must exist.
    pub fn existing(&self, value: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
        let p = value
            .clone()
            .ok_or_else(|| CliError::Usage(format!("missing config key '{key}' (or --{})", key.replace('_', "-"))))?;
        if !p.exists() {
            return Err(CliError::Data(urbanmon::Error::Context(format!("{key} path {} does not exist", p.display()))));
        }
        Ok(p)
    }

    pub fn run_dir(&self) -> Result<PathBuf, CliError> {
        self.run_dir
            .clone()
            .ok_or_else(|| CliError::Usage("missing config key 'run_dir' (or --run-dir)".into()))
    }
}
