//! Run configuration: one TOML file plus flag overrides.

use musechat::contrastive::{ContrastiveConfig, ModelConfig};
use musechat::datasim::DataConfig;
use musechat::encoders::EncoderConfig;
use musechat::fusion::FusionConfig;
use musechat::reasoner::ReasonerConfig;
use musechat::retrieval::DEFAULT_K;
use musechat::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SEED_ENV: &str = "MUSECHAT_SEED";
pub const DEFAULT_SEED: u64 = 7;
/// Resolved configuration stored next to every checkpoint.
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub pool_size: usize,
    pub k_list: Vec<usize>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            pool_size: 100,
            k_list: DEFAULT_K.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data: PathBuf,
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
    pub contrastive: ContrastiveConfig,
    pub retrieval: RetrievalConfig,
    pub data: DataConfig,
    pub reasoner: ReasonerConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            encoder: EncoderConfig::default(),
            fusion: FusionConfig::default(),
            contrastive: ContrastiveConfig::default(),
            retrieval: RetrievalConfig::default(),
            data: DataConfig::default(),
            reasoner: ReasonerConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML. The seed falls back to `MUSECHAT_SEED`, then the default,
    /// when the file does not set it.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::config(format!("invalid config: {e}")))?;
        let has_seed = table.contains_key("seed");
        let mut config: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("invalid config: {}", e.message())))?;
        if !has_seed {
            config.seed = env_seed()?.unwrap_or(DEFAULT_SEED);
        }
        Ok(config)
    }

    /// Reads `path`, or starts from defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
            None => Self::from_toml(""),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.fusion.validate()?;
        self.contrastive.validate()?;
        self.data.validate(&self.encoder)?;
        self.reasoner.validate()?;
        if self.retrieval.pool_size < 2 {
            return Err(Error::config("retrieval.pool_size must be at least 2"));
        }
        if self.retrieval.k_list.is_empty() || self.retrieval.k_list.contains(&0) {
            return Err(Error::config("retrieval.k_list must hold positive ranks"));
        }
        Ok(())
    }

    /// Model shape for features of width `d_in` and prompts of
    /// `max_text_tokens` rows.
    pub fn model_config(&self, d_in: usize, max_text_tokens: usize) -> ModelConfig {
        ModelConfig {
            d_in,
            max_text_tokens,
            fusion: self.fusion.clone(),
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

/// Flag value, else the config seed (which already carries the
/// environment fallback).
pub fn resolve_seed(flag: Option<u64>, config: &RunConfig) -> u64 {
    flag.unwrap_or(config.seed)
}
