//! Run configuration: file format, defaults, validation.
//!
//! Defaults pin the reference operating point: retrieval k = 1, a 30-step
//! episode limit, and per-tag temperatures of 0.7 (act), 1.0 (extract),
//! 0.0 (judge/select), 1.0 (contrast), 0.7 (refine). Config files are TOML;
//! the fully resolved config is echoed into every run report.

use crate::gateway::{HttpBackendConfig, Temperatures};
use crate::retrieval::{HttpEmbedderConfig, HASH_EMBEDDER_DIM};
use crate::scaling::ScalingConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("invalid config field {field}: {detail}")]
    Invalid { field: &'static str, detail: String },
}

/// Which text-generation backend to drive.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    /// Deterministic scripted backend loaded from a script file.
    Scripted { script: PathBuf },
    /// Generic JSON-over-HTTP chat backend.
    Http(HttpBackendConfig),
}

/// Which embedding provider backs retrieval.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingSpec {
    /// Deterministic n-gram hash embedder (offline default).
    Hash {
        #[serde(default = "default_hash_dim")]
        dimension: usize,
        #[serde(default)]
        seed: u64,
    },
    /// HTTP embedding backend.
    Http(HttpEmbedderConfig),
}

fn default_hash_dim() -> usize {
    HASH_EMBEDDER_DIM
}

/// Named seeds for everything randomized at run scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    /// Run-scope seed (scripted backend generators).
    pub run: u64,
    /// Seed for the pass@1 random-rollout selection.
    pub pass_at_1: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { run: 0, pass_at_1: 17 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Directory holding one `<template id>.txt` per prompt template.
    pub templates: PathBuf,
    /// Scripted world suite definition.
    pub worlds: PathBuf,
    /// Task stream, one JSON record per line.
    pub stream: PathBuf,
    /// Existing bank to continue from; absent means start empty.
    pub bank: Option<PathBuf>,
    /// Parent directory for per-run artifact directories.
    pub run_dir: PathBuf,
    /// Optional persistent embedding cache.
    pub embedding_cache: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            templates: PathBuf::from("templates"),
            worlds: PathBuf::from("worlds/demo.json"),
            stream: PathBuf::from("streams/demo.jsonl"),
            bank: None,
            run_dir: PathBuf::from("runs"),
            embedding_cache: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub backend: BackendSpec,
    pub embedding: EmbeddingSpec,
    /// Master switch for the memory loop: retrieval, extraction, and
    /// consolidation are all disabled when off. Judging still runs.
    pub memory: bool,
    /// Number of experiences retrieved per task.
    pub retrieval_k: usize,
    pub max_steps: usize,
    pub scaling: ScalingConfig,
    /// Concurrency bound for parallel rollouts (1 = strictly serial).
    pub rollout_width: usize,
    pub temperatures: Temperatures,
    pub seeds: Seeds,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: BackendSpec::Scripted { script: PathBuf::from("scripts/demo.json") },
            embedding: EmbeddingSpec::Hash { dimension: HASH_EMBEDDER_DIM, seed: 0 },
            memory: true,
            retrieval_k: 1,
            max_steps: crate::agent::DEFAULT_MAX_STEPS,
            scaling: ScalingConfig::default(),
            rollout_width: 1,
            temperatures: Temperatures::default(),
            seeds: Seeds::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.display().to_string(), source: e })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.retrieval_k == 0 {
            return Err(ConfigError::Invalid {
                field: "retrieval_k",
                detail: "must be at least 1".into(),
            });
        }
        if self.max_steps == 0 {
            return Err(ConfigError::Invalid {
                field: "max_steps",
                detail: "must be at least 1".into(),
            });
        }
        if self.rollout_width == 0 {
            return Err(ConfigError::Invalid {
                field: "rollout_width",
                detail: "must be at least 1".into(),
            });
        }
        self.scaling
            .validate()
            .map_err(|detail| ConfigError::Invalid { field: "scaling", detail })?;
        for (name, value) in [
            ("temperatures.act", self.temperatures.act),
            ("temperatures.extract", self.temperatures.extract),
            ("temperatures.judge", self.temperatures.judge),
            ("temperatures.select", self.temperatures.select),
            ("temperatures.contrast", self.temperatures.contrast),
            ("temperatures.refine", self.temperatures.refine),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ConfigError::Invalid {
                    field: "temperatures",
                    detail: format!("{name} must be a finite value >= 0, got {value}"),
                });
            }
        }
        Ok(())
    }

    /// Short content digest of the resolved config, used in run directory
    /// names.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let hex = format!("{:x}", hasher.finalize());
        hex[..8].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaling::ScalingMode;

    #[test]
    fn defaults_lock_reference_constants() {
        let config = RunConfig::default();
        assert_eq!(config.retrieval_k, 1);
        assert_eq!(config.max_steps, 30);
        assert_eq!(config.temperatures.act, 0.7);
        assert_eq!(config.temperatures.extract, 1.0);
        assert_eq!(config.temperatures.judge, 0.0);
        assert_eq!(config.scaling.mode, ScalingMode::None);
        assert_eq!(config.scaling.k, 1);
        assert!(config.memory);
        config.validate().unwrap();
    }

    #[test]
    fn mode_none_with_k3_is_invalid() {
        let mut config = RunConfig::default();
        config.scaling.k = 3;
        let err = config.validate().unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "scaling", .. }));
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let config = RunConfig::default();
        let text = toml::to_string(&config).unwrap();
        let parsed: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(parsed.digest(), config.digest());

        // A minimal file relies on defaults everywhere else.
        let parsed: RunConfig = toml::from_str(
            "memory = false\n[scaling]\nmode = \"parallel\"\nk = 3\naggregate = true\n",
        )
        .unwrap();
        assert!(!parsed.memory);
        assert_eq!(parsed.scaling.k, 3);
        assert_eq!(parsed.retrieval_k, 1);
        parsed.validate().unwrap();
    }

    #[test]
    fn digest_is_stable_and_field_sensitive() {
        let a = RunConfig::default();
        let b = RunConfig::default();
        assert_eq!(a.digest(), b.digest());
        let mut c = RunConfig::default();
        c.retrieval_k = 2;
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut config = RunConfig::default();
        config.temperatures.judge = f64::NAN;
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("temperatures"));

        let mut config = RunConfig::default();
        config.retrieval_k = 0;
        assert!(config.validate().unwrap_err().to_string().contains("retrieval_k"));
    }
}
