use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dialplan::faithfulness::DetectorTraining;
use dialplan::model::ModelConfig;
use dialplan::pipeline::{DecodeOptions, TrainConfig};
use serde::{Deserialize, Serialize};

/// Everything a run needs besides the per-command flags. Every field has a
/// default, so `{}` is a valid config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub valid_corpus: Option<PathBuf>,
    pub tokenizer: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub detector: Option<PathBuf>,
    pub merges: Option<usize>,
    pub train: TrainConfig,
    pub detector_model: Option<ModelConfig>,
    pub detector_training: DetectorTraining,
    pub decode: DecodeOptions,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}

/// Flag value, else config value, else an error naming both.
pub fn pick(flag: Option<PathBuf>, config: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match flag.or_else(|| config.clone()) {
        Some(p) => Ok(p),
        None => bail!("no {what} given: pass --{what} or set \"{}\" in the config", what.replace('-', "_")),
    }
}

/// Fails early when an input path does not exist.
pub fn existing(path: PathBuf) -> Result<PathBuf> {
    if !path.exists() {
        bail!("{} does not exist", path.display());
    }
    Ok(path)
}
