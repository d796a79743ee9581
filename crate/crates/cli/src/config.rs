use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nerdistill::annotate::client::{CacheMode, HttpEndpoint};
use nerdistill::annotate::{ClientConfig, PostProcess};
use nerdistill::prompt::PromptMode;
use nerdistill::{LabelSet, TagScheme};
use serde::{Deserialize, Serialize};

/// Settings file contents. Every field is optional; command-line flags win.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub labels: Option<LabelSet>,
    pub scheme: Option<TagScheme>,
    pub template: Option<PathBuf>,
    pub mode: Option<PromptMode>,
    pub client: ClientConfig,
    pub endpoint: HttpEndpoint,
    pub cache_dir: Option<PathBuf>,
    pub cache_mode: Option<CacheMode>,
    pub post: PostProcess,
    pub epochs: Option<usize>,
    pub iterations: Option<usize>,
    pub trainer: Option<TrainerConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrainerConfig {
    Baseline,
    GoldEcho,
    External {
        program: String,
        #[serde(default)]
        args: Vec<String>,
        work_dir: PathBuf,
    },
}

impl Config {
    /// Reads JSON or TOML, chosen by file extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
            Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
            _ => bail!("{}: config must end in .json or .toml", path.display()),
        };
        Ok(cfg)
    }

    pub fn labels(&self) -> LabelSet {
        self.labels.clone().unwrap_or_default()
    }
}
