//! Service configuration: a TOML file with `CHANGERISK_*` environment
//! overrides. Every field has a default, so an empty file is valid.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use changerisk::harness::PipelineConfig;
use changerisk::rulebase::BandCutoffs;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Socket address to bind.
    pub listen: SocketAddr,
    /// Root of the append-only logs and the model registry.
    pub data_dir: PathBuf,
    /// Band cutoffs applied to served scores.
    pub cutoffs: BandCutoffs,
    /// Operating threshold; `None` uses the active model's own threshold.
    pub threshold: Option<u8>,
    /// Directory served under `/ui`.
    pub static_dir: PathBuf,
    /// When set, every `/v1` request must send `x-api-token` with this value.
    pub token: Option<String>,
    /// Rule file for retrain baselines; `None` uses the bundled example.
    pub rules_path: Option<PathBuf>,
    /// Options for `POST /v1/model/retrain`.
    pub pipeline: PipelineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("data"),
            cutoffs: BandCutoffs::default(),
            threshold: None,
            static_dir: PathBuf::from("ui/dist"),
            token: None,
            rules_path: None,
            pipeline: PipelineConfig::default(),
        }
    }
}

/// Environment variables read by [`ServiceConfig::apply_env`].
pub const ENV_KEYS: [&str; 8] = [
    "CHANGERISK_LISTEN",
    "CHANGERISK_DATA_DIR",
    "CHANGERISK_LOW_MAX",
    "CHANGERISK_MEDIUM_MAX",
    "CHANGERISK_THRESHOLD",
    "CHANGERISK_STATIC_DIR",
    "CHANGERISK_TOKEN",
    "CHANGERISK_RULES_PATH",
];

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` if given, then applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    /// Overrides fields from `lookup`, which maps an [`ENV_KEYS`] name to a value.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        fn parsed<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, ServiceError> {
            raw.trim()
                .parse()
                .map_err(|_| ServiceError::Config(format!("{key}: cannot parse `{raw}`")))
        }
        if let Some(v) = lookup("CHANGERISK_LISTEN") {
            self.listen = parsed("CHANGERISK_LISTEN", &v)?;
        }
        if let Some(v) = lookup("CHANGERISK_DATA_DIR") {
            self.data_dir = PathBuf::from(v);
        }
        if let Some(v) = lookup("CHANGERISK_LOW_MAX") {
            self.cutoffs.low_max = parsed("CHANGERISK_LOW_MAX", &v)?;
        }
        if let Some(v) = lookup("CHANGERISK_MEDIUM_MAX") {
            self.cutoffs.medium_max = parsed("CHANGERISK_MEDIUM_MAX", &v)?;
        }
        if let Some(v) = lookup("CHANGERISK_THRESHOLD") {
            self.threshold = if v.trim().is_empty() {
                None
            } else {
                Some(parsed("CHANGERISK_THRESHOLD", &v)?)
            };
        }
        if let Some(v) = lookup("CHANGERISK_STATIC_DIR") {
            self.static_dir = PathBuf::from(v);
        }
        if let Some(v) = lookup("CHANGERISK_TOKEN") {
            self.token = (!v.is_empty()).then_some(v);
        }
        if let Some(v) = lookup("CHANGERISK_RULES_PATH") {
            self.rules_path = (!v.is_empty()).then(|| PathBuf::from(v));
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        self.cutoffs.validate()?;
        if self.threshold.is_some_and(|t| t > 100) {
            return Err(ServiceError::Config("threshold must be within 0..=100".into()));
        }
        self.pipeline.validate()?;
        Ok(())
    }
}
