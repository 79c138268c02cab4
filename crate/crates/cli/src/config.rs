//! TOML run configuration.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Secrets never live here: providers name the environment variable
//! that carries their key.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use detox_eval::corpus::{DataFormat, Schema};
use detox_eval::provider::ProviderConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub providers: Vec<ProviderConfig>,
    #[serde(default)]
    pub prompts: PromptConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub mock: MockConfig,
    #[serde(default)]
    pub sentiment: SentimentConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub lexicon: LexiconConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_batch_size() -> usize {
    25
}

fn default_workers() -> usize {
    4
}

fn default_out_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: String,
    pub format: DataFormat,
    #[serde(default)]
    pub schema: Schema,
    /// Transform only records labelled abusive.
    #[serde(default = "yes")]
    pub abusive_only: bool,
    /// When set, draw this many records per abusive category (seeded).
    pub sample_per_category: Option<usize>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    pub transform: Option<String>,
    pub detect: Option<String>,
    #[serde(default)]
    pub extra_refusal_patterns: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Tab-separated `surface<TAB>expansion` file replacing the built-in table.
    pub contractions: Option<String>,
    /// One-word-per-line stoplist replacing the built-in one.
    pub stopwords: Option<String>,
    #[serde(default)]
    pub extra_stopwords: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockConfig {
    /// JSONL of `{"model", "task", "input", "response"}` or `"error"` entries.
    pub script: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SentimentBackendKind {
    #[default]
    Baseline,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentimentConfig {
    #[serde(default)]
    pub backend: SentimentBackendKind,
    pub url: Option<String>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    0.5
}

impl Default for SentimentConfig {
    fn default() -> Self {
        SentimentConfig {
            backend: SentimentBackendKind::Baseline,
            url: None,
            threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingBackendKind {
    #[default]
    Hash,
    Provider,
    Precomputed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    #[serde(default)]
    pub backend: EmbeddingBackendKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// For `backend = "provider"`: which entry of `providers` serves embeddings.
    pub provider: Option<String>,
    pub model_id: Option<String>,
    /// For `backend = "precomputed"`: JSONL file per source (`original` or model name).
    #[serde(default)]
    pub precomputed: std::collections::BTreeMap<String, String>,
}

fn default_dim() -> usize {
    16
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            backend: EmbeddingBackendKind::Hash,
            dim: default_dim(),
            provider: None,
            model_id: None,
            precomputed: Default::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    #[default]
    Informative,
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconConfig {
    /// Ready-made lexicon, one word per line. Used when no corpora are given.
    pub file: Option<String>,
    /// One document per line.
    pub abusive_corpus: Option<String>,
    pub benign_corpus: Option<String>,
    #[serde(default)]
    pub prior: PriorKind,
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    #[serde(default = "default_z")]
    pub z_threshold: f64,
    /// Mask lexicon words in emitted reports.
    #[serde(default)]
    pub censor: bool,
}

fn default_alpha0() -> f64 {
    500.0
}

fn default_z() -> f64 {
    1.96
}

impl Default for LexiconConfig {
    fn default() -> Self {
        LexiconConfig {
            file: None,
            abusive_corpus: None,
            benign_corpus: None,
            prior: PriorKind::Informative,
            alpha0: default_alpha0(),
            z_threshold: default_z(),
            censor: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_top_k")]
    pub ngram_top_k: usize,
}

fn default_top_k() -> usize {
    20
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            ngram_top_k: default_top_k(),
        }
    }
}

/// A parsed config plus the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        if config.batch_size == 0 {
            bail!("batch_size must be at least 1");
        }
        if config.workers == 0 {
            bail!("workers must be at least 1");
        }
        for p in &config.providers {
            p.retry.validate().with_context(|| format!("provider {}", p.name))?;
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, base_dir })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn run_id(&self) -> String {
        self.config
            .run_id
            .clone()
            .unwrap_or_else(|| format!("run-{}", self.config.seed))
    }
}
