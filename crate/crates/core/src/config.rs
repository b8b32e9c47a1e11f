//! Run configuration: one TOML document with a top-level `seed` and sections
//! for every module. Unknown keys are rejected. `key.path=value` overrides
//! are applied to the parsed document before it is validated, so an
//! override can address any key a file can.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::ModelConfig;
use crate::purify::{RefineConfig, RefinementPrompt};
use crate::synth::SynthConfig;
use crate::training::{LossConfig, TrainConfig};
use crate::types::Split;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("bad override {0:?}: expected key.path=value")]
    OverrideSyntax(String),
    #[error("override {key}: {msg}")]
    Override { key: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub id: String,
    #[serde(default = "default_tag")]
    pub tag: String,
    pub width: u32,
    pub height: u32,
}

fn default_tag() -> String {
    "default".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub patch_size: u32,
    pub split_ratio: (f64, f64),
    pub sources: Vec<SourceSpec>,
    /// Confusion-matrix CSV files.
    pub confusions: Vec<PathBuf>,
    /// Method columns of the label table; empty means every method found in
    /// the confusion files, sorted.
    pub methods: Vec<String>,
    pub exclude_tags: Vec<String>,
    /// Branch name → feature file, copied into every record's `feature_refs`.
    pub feature_files: BTreeMap<String, String>,
    /// Manifest read by downstream commands; defaults to `<out>/manifest.jsonl`.
    pub manifest: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            patch_size: 1024,
            split_ratio: (0.8, 0.2),
            sources: Vec::new(),
            confusions: Vec::new(),
            methods: Vec::new(),
            exclude_tags: Vec::new(),
            feature_files: BTreeMap::new(),
            manifest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Split evaluated by `eval` and `recommend`.
    pub split: Split,
    /// Prediction table to score instead of running checkpoints.
    pub predictions: Option<PathBuf>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            split: Split::Test,
            predictions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecommendConfig {
    pub pred_tol: f64,
    pub truth_tol: f64,
    /// Prediction table; defaults to the one written by `eval`.
    pub predictions: Option<PathBuf>,
}

impl Default for RecommendConfig {
    fn default() -> Self {
        Self {
            pred_tol: crate::recommend::PRED_TOL,
            truth_tol: crate::recommend::TRUTH_TOL,
            predictions: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientKind {
    /// In-process echo client, for dry runs.
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PurifyConfig {
    pub captions: Option<PathBuf>,
    pub image_embeddings: Option<PathBuf>,
    pub text_embeddings: Option<PathBuf>,
    /// Fixed threshold; when absent the `tau_quantile` of observed scores is used.
    pub tau: Option<f64>,
    pub tau_quantile: f64,
    pub client: ClientKind,
    pub endpoint: String,
    pub refine: RefineConfig,
    pub prompt: RefinementPrompt,
}

impl Default for PurifyConfig {
    fn default() -> Self {
        Self {
            captions: None,
            image_embeddings: None,
            text_embeddings: None,
            tau: None,
            tau_quantile: 0.3,
            client: ClientKind::Mock,
            endpoint: "http://127.0.0.1:8080/caption".into(),
            refine: RefineConfig::default(),
            prompt: RefinementPrompt::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub metrics: MetricsConfig,
    pub recommend: RecommendConfig,
    pub purify: PurifyConfig,
    pub synthetic: SynthConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            metrics: MetricsConfig::default(),
            recommend: RecommendConfig::default(),
            purify: PurifyConfig::default(),
            synthetic: SynthConfig::default(),
        }
    }
}

/// Parses `raw` as a TOML value; bare words that are not valid TOML become strings.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `key.path` in `doc`, creating intermediate tables.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::OverrideSyntax(spec.to_string()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::OverrideSyntax(spec.to_string()));
    }
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| ConfigError::Override {
            key: key.to_string(),
            msg: format!("{p} is not a table"),
        })?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl Config {
    /// Builds a config from optional TOML text plus overrides.
    pub fn resolve(text: Option<&str>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = match text {
            Some(t) => t.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?,
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = path
            .map(|p| {
                std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.display().to_string(),
                    source,
                })
            })
            .transpose()?;
        Self::resolve(text.as_deref(), overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved TOML.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}
