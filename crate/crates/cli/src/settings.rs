//! Effective configuration: defaults, then `WEAKDAP_ENDPOINT`, then the
//! config file, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use weakdap_core::genbackend::ENDPOINT_ENV;
use weakdap_core::weaklabel::FeaturizerConfig;
use weakdap_core::{FilterConfig, LabelMode, LoopConfig, Strategy, Task, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub task: Task,
    /// Label-space file; required for intent data unless the labels can be
    /// read off the input.
    pub labels: Option<PathBuf>,
    pub backend: Backend,
    pub endpoint: Option<String>,
    pub parallelism: usize,
    pub mock_noise: f64,
    /// Gold file whose utterances become mock templates; defaults to the
    /// command's own gold input.
    pub mock_templates: Option<PathBuf>,
    pub strategy: Strategy,
    pub multiplier: f64,
    pub label_mode: LabelMode,
    pub speaker_names: (String, String),
    pub control_prefix: Option<String>,
    pub k_examples: usize,
    pub stratified: bool,
    pub filter: FilterConfig,
    #[serde(rename = "loop")]
    pub loop_cfg: LoopConfig,
    pub train: TrainConfig,
    pub featurizer: FeaturizerConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            task: Task::Emotion,
            labels: None,
            backend: Backend::Mock,
            endpoint: None,
            parallelism: 4,
            mock_noise: 0.0,
            mock_templates: None,
            strategy: Strategy::Lta,
            multiplier: 2.0,
            label_mode: LabelMode::Gold,
            speaker_names: ("Alice".into(), "Bob".into()),
            control_prefix: None,
            k_examples: 10,
            stratified: true,
            filter: FilterConfig::default(),
            loop_cfg: LoopConfig::default(),
            train: TrainConfig::default(),
            featurizer: FeaturizerConfig::default(),
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl Settings {
    /// Defaults, then `env_endpoint`, then the file at `config`.
    pub fn layered(config: Option<&Path>, env_endpoint: Option<String>) -> Result<Self> {
        let mut value = serde_json::to_value(Settings::default())?;
        if let Some(ep) = env_endpoint.filter(|e| !e.trim().is_empty()) {
            merge(&mut value, serde_json::json!({ "endpoint": ep }));
        }
        if let Some(path) = config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let file: Value =
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            if !file.is_object() {
                bail!("config {} must hold a JSON object", path.display());
            }
            merge(&mut value, file);
        }
        serde_json::from_value(value).context("invalid configuration")
    }

    pub fn from_env(config: Option<&Path>) -> Result<Self> {
        Self::layered(config, std::env::var(ENDPOINT_ENV).ok())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.multiplier > 0.0) {
            bail!("multiplier must be positive");
        }
        if !(0.0..=1.0).contains(&self.mock_noise) {
            bail!("mock noise rate must lie in [0, 1]");
        }
        if self.k_examples == 0 {
            bail!("k must be positive");
        }
        if self.backend == Backend::Http && self.endpoint.is_none() {
            bail!("http backend needs --endpoint, an `endpoint` config entry or {ENDPOINT_ENV}");
        }
        self.filter.validate()?;
        self.loop_cfg.validate()?;
        Ok(())
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("settings serialize")
    }
}
