//! Model registry: artifacts under `registry/models/<version>/` and an
//! append-only event log `registry/events.jsonl`. Replaying the log gives the
//! entry table; the last activation names the active model.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use changerisk::gbdt::TrainingRange;
use changerisk::{FeatureSchema, TrainedModel};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::store::AppendLog;

pub const REGISTRY_DIR: &str = "registry";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const SCHEMA_FILE: &str = "schema.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    /// Registered, never activated.
    Inactive,
    Active,
    Retired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistryEntry {
    pub model_version: String,
    /// Relative to the data directory.
    pub artifact_path: PathBuf,
    pub schema_path: PathBuf,
    pub schema_fingerprint: String,
    pub threshold: Option<u8>,
    pub training_range: Option<TrainingRange>,
    pub include_team_features: bool,
    #[serde(with = "changerisk::corpus::timestamp")]
    pub registered_at: DateTime<Utc>,
    #[serde(default, with = "changerisk::corpus::timestamp::option")]
    pub activated_at: Option<DateTime<Utc>>,
    pub status: EntryStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RegistryEvent {
    Registered { entry: ModelRegistryEntry },
    Activated {
        model_version: String,
        #[serde(with = "changerisk::corpus::timestamp")]
        at: DateTime<Utc>,
    },
}

#[derive(Debug)]
pub struct Registry {
    data_dir: PathBuf,
    log: AppendLog,
    entries: BTreeMap<String, ModelRegistryEntry>,
    active: Option<String>,
}

impl Registry {
    pub fn open(data_dir: &Path) -> Result<Self, ServiceError> {
        let log = AppendLog::open(&data_dir.join(REGISTRY_DIR).join(EVENTS_FILE))?;
        let mut reg = Self {
            data_dir: data_dir.to_path_buf(),
            entries: BTreeMap::new(),
            active: None,
            log,
        };
        for event in reg.log.read_all::<RegistryEvent>()? {
            reg.apply(event);
        }
        Ok(reg)
    }

    fn apply(&mut self, event: RegistryEvent) {
        match event {
            RegistryEvent::Registered { entry } => {
                self.entries.insert(entry.model_version.clone(), entry);
            }
            RegistryEvent::Activated { model_version, at } => {
                if let Some(prev) = self.active.take().and_then(|v| self.entries.get_mut(&v)) {
                    prev.status = EntryStatus::Retired;
                }
                if let Some(e) = self.entries.get_mut(&model_version) {
                    e.status = EntryStatus::Active;
                    e.activated_at = Some(at);
                }
                self.active = Some(model_version);
            }
        }
    }

    pub fn entries(&self) -> Vec<ModelRegistryEntry> {
        self.entries.values().cloned().collect()
    }

    pub fn get(&self, version: &str) -> Option<&ModelRegistryEntry> {
        self.entries.get(version)
    }

    pub fn active(&self) -> Option<&ModelRegistryEntry> {
        self.active.as_ref().and_then(|v| self.entries.get(v))
    }

    pub fn active_version(&self) -> Option<&str> {
        self.active.as_deref()
    }

    /// Stores artifacts and appends a registration. Registering a version
    /// twice returns the existing entry.
    pub fn register(
        &mut self,
        model: &TrainedModel,
        schema: &FeatureSchema,
        now: DateTime<Utc>,
    ) -> Result<(ModelRegistryEntry, bool), ServiceError> {
        if model.schema_fingerprint != schema.fingerprint {
            return Err(changerisk::Error::FingerprintMismatch {
                expected: schema.fingerprint.clone(),
                found: model.schema_fingerprint.clone(),
            }
            .into());
        }
        if let Some(existing) = self.entries.get(&model.model_version) {
            return Ok((existing.clone(), false));
        }
        let rel = Path::new(REGISTRY_DIR).join("models").join(&model.model_version);
        let dir = self.data_dir.join(&rel);
        std::fs::create_dir_all(&dir)?;
        crate::store::write_atomic(&dir.join(MODEL_FILE), &model.to_json())?;
        let schema_bytes = serde_json::to_vec_pretty(schema).map_err(|e| ServiceError::Storage(e.to_string()))?;
        crate::store::write_atomic(&dir.join(SCHEMA_FILE), &schema_bytes)?;
        let entry = ModelRegistryEntry {
            model_version: model.model_version.clone(),
            artifact_path: rel.join(MODEL_FILE),
            schema_path: rel.join(SCHEMA_FILE),
            schema_fingerprint: schema.fingerprint.clone(),
            threshold: model.threshold,
            training_range: model.training_range.clone(),
            include_team_features: schema.include_team_features,
            registered_at: now,
            activated_at: None,
            status: EntryStatus::Inactive,
        };
        let event = RegistryEvent::Registered { entry: entry.clone() };
        self.log.append(std::slice::from_ref(&event))?;
        self.apply(event);
        Ok((entry, true))
    }

    pub fn load_artifacts(&self, version: &str) -> Result<(TrainedModel, FeatureSchema), ServiceError> {
        let entry = self
            .entries
            .get(version)
            .ok_or_else(|| ServiceError::NotFound(format!("model version {version}")))?;
        let model = TrainedModel::load(&self.data_dir.join(&entry.artifact_path))?;
        let schema = FeatureSchema::load(&self.data_dir.join(&entry.schema_path))?;
        if model.schema_fingerprint != schema.fingerprint {
            return Err(changerisk::Error::FingerprintMismatch {
                expected: schema.fingerprint,
                found: model.schema_fingerprint,
            }
            .into());
        }
        Ok((model, schema))
    }

    /// Appends the activation. Callers serialize activations and check
    /// preconditions first.
    pub fn record_activation(&mut self, version: &str, now: DateTime<Utc>) -> Result<ModelRegistryEntry, ServiceError> {
        if !self.entries.contains_key(version) {
            return Err(ServiceError::NotFound(format!("model version {version}")));
        }
        let event = RegistryEvent::Activated {
            model_version: version.to_string(),
            at: now,
        };
        self.log.append(std::slice::from_ref(&event))?;
        self.apply(event);
        Ok(self.entries[version].clone())
    }
}
