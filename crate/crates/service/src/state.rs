//! Shared service state and the operations behind each endpoint.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use changerisk::corpus::{ingest_values, Rejection};
use changerisk::explain::{group_collapse, tree_shap, CollapseMode, Contribution};
use changerisk::featurize::TeamIndex;
use changerisk::gbdt::margin_to_score;
use changerisk::harness::{prepare, run_pipeline};
use changerisk::linkage::link_corpus;
use changerisk::rulebase::{risk_band, RiskBand, RuleConfig};
use changerisk::{ChangeTicket, FeatureSchema, IncidentTicket, ReleaseRecord, TrainedModel};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::ServiceConfig;
use crate::error::ServiceError;
use crate::registry::{ModelRegistryEntry, Registry};
use crate::store::{Decision, FeedbackEvent, ScoreRecord, Store, Verdict};

/// Attributions returned per scored change.
pub const TOP_ATTRIBUTIONS: usize = 10;

/// An immutable model snapshot. A request clones the `Arc` once, so every
/// field of its response comes from the same version.
#[derive(Debug)]
pub struct Serving {
    pub entry: ModelRegistryEntry,
    pub model: TrainedModel,
    pub schema: FeatureSchema,
    pub team: Option<TeamIndex>,
    feature_names: Vec<String>,
    groups: BTreeMap<String, Vec<usize>>,
}

impl Serving {
    fn new(entry: ModelRegistryEntry, model: TrainedModel, schema: FeatureSchema, team: Option<TeamIndex>) -> Self {
        Self {
            feature_names: schema.feature_names(),
            groups: schema.groups(),
            entry,
            model,
            schema,
            team,
        }
    }

    pub fn version(&self) -> &str {
        &self.model.model_version
    }

    pub fn score(&self, change: &ChangeTicket) -> u8 {
        let row = self.schema.transform_row(change, self.team.as_ref());
        margin_to_score(self.model.forest.predict_margin(&row))
    }

    pub fn explain(&self, change: &ChangeTicket) -> Result<(u8, f64, Vec<Contribution>), ServiceError> {
        let row = self.schema.transform_row(change, self.team.as_ref());
        let attribution = tree_shap(&self.model.forest, &row, &change.id, self.version())?;
        let score = margin_to_score(self.model.forest.predict_margin(&row));
        let grouped = group_collapse(&attribution, &self.feature_names, &self.groups, CollapseMode::SignedMax);
        Ok((score, attribution.base_value, grouped.top(TOP_ATTRIBUTIONS)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub change_id: String,
    pub score: u8,
    pub band: RiskBand,
    pub flagged: bool,
    pub threshold: u8,
    /// Margin-scale expected value the attributions are relative to.
    pub base_value: f64,
    pub top_attributions: Vec<Contribution>,
    pub model_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub change_id: String,
    pub score: u8,
    pub band: RiskBand,
    pub flagged: bool,
    pub label_if_known: Option<u8>,
    #[serde(with = "changerisk::corpus::timestamp")]
    pub start_time: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueResponse {
    pub model_version: String,
    pub threshold: u8,
    pub items: Vec<QueueItem>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestRequest {
    pub changes: Vec<Value>,
    pub incidents: Vec<Value>,
    pub releases: Vec<Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub changes_accepted: usize,
    pub incidents_accepted: usize,
    pub releases_accepted: usize,
    pub rejections: BTreeMap<String, Vec<Rejection>>,
    pub scored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub change_id: String,
    pub verdict: Verdict,
    pub decision: Decision,
    pub reviewer: String,
    #[serde(default, with = "changerisk::corpus::timestamp::option")]
    pub timestamp: Option<DateTime<Utc>>,
    #[serde(default)]
    pub model_version: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivateRequest {
    /// Compare-and-swap guard: the version the caller believes is active
    /// (`null` for none). Omitted, the active version at arrival is used.
    #[serde(default, with = "double_option")]
    pub expected_active: Option<Option<String>>,
}

mod double_option {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Option<String>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(inner) => inner.serialize(s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Option<String>>, D::Error> {
        Option::<String>::deserialize(d).map(Some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelListing {
    pub active: Option<ModelRegistryEntry>,
    pub entries: Vec<ModelRegistryEntry>,
}

/// Per-change label derived from ingested incidents; `None` until any exist.
type LabelMap = BTreeMap<String, u8>;

pub struct AppState {
    pub config: ServiceConfig,
    pub rules: RuleConfig,
    store: RwLock<Store>,
    registry: RwLock<Registry>,
    labels: RwLock<Option<Arc<LabelMap>>>,
    serving: RwLock<Option<Arc<Serving>>>,
    /// Serializes activations and retrain registrations.
    lifecycle: tokio::sync::Mutex<()>,
}

impl std::fmt::Debug for AppState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppState").field("data_dir", &self.config.data_dir).finish_non_exhaustive()
    }
}

fn now() -> DateTime<Utc> {
    Utc::now()
}

impl AppState {
    /// Opens the data directory and restores the active model, if any.
    pub fn open(config: ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        config.validate()?;
        let rules = match &config.rules_path {
            Some(p) => RuleConfig::load(p)?,
            None => RuleConfig::example(),
        };
        let store = Store::open(&config.data_dir)?;
        let registry = Registry::open(&config.data_dir)?;
        let state = Arc::new(Self {
            config,
            rules,
            store: RwLock::new(store),
            registry: RwLock::new(registry),
            labels: RwLock::new(None),
            serving: RwLock::new(None),
            lifecycle: tokio::sync::Mutex::new(()),
        });
        state.refresh_labels()?;
        let active = state.registry.read().expect("registry lock").active().cloned();
        if let Some(entry) = active {
            let serving = state.build_serving(entry)?;
            *state.serving.write().expect("serving lock") = Some(Arc::new(serving));
            tracing::info!(version = %state.active_version().unwrap_or_default(), "restored active model");
        }
        Ok(state)
    }

    pub fn serving(&self) -> Option<Arc<Serving>> {
        self.serving.read().expect("serving lock").clone()
    }

    pub fn active_version(&self) -> Option<String> {
        self.serving().map(|s| s.version().to_string())
    }

    fn require_serving(&self) -> Result<Arc<Serving>, ServiceError> {
        self.serving().ok_or(ServiceError::NoActiveModel)
    }

    fn operating_threshold(&self, serving: &Serving, override_: Option<u8>) -> u8 {
        override_
            .or(self.config.threshold)
            .or(serving.model.threshold)
            .unwrap_or(self.rules.threshold)
    }

    fn band(&self, score: u8) -> RiskBand {
        risk_band(i64::from(score), &self.config.cutoffs).expect("scores lie in 0..=100")
    }

    fn team_index(&self, schema: &FeatureSchema) -> Result<Option<TeamIndex>, ServiceError> {
        if !schema.include_team_features {
            return Ok(None);
        }
        let store = self.store.read().expect("store lock");
        let p = &self.config.pipeline;
        let linkage = link_corpus(&store.corpus, &p.corpus, &p.linkage, &p.metric.priority_weights)?;
        Ok(Some(TeamIndex::build(
            &store.corpus.changes,
            &linkage.links,
            &linkage.incidents,
            &store.corpus.releases,
            schema.team,
        )))
    }

    fn build_serving(&self, entry: ModelRegistryEntry) -> Result<Serving, ServiceError> {
        let (model, schema) = self.registry.read().expect("registry lock").load_artifacts(&entry.model_version)?;
        let team = self.team_index(&schema)?;
        Ok(Serving::new(entry, model, schema, team))
    }

    fn refresh_labels(&self) -> Result<(), ServiceError> {
        let store = self.store.read().expect("store lock");
        let labels = if store.corpus.incidents.is_empty() {
            None
        } else {
            let p = &self.config.pipeline;
            let linkage = link_corpus(&store.corpus, &p.corpus, &p.linkage, &p.metric.priority_weights)?;
            Some(Arc::new(
                linkage.labels.iter().map(|l| (l.change_id.clone(), l.label)).collect(),
            ))
        };
        drop(store);
        *self.labels.write().expect("labels lock") = labels;
        Ok(())
    }

    /// Scores stored changes the serving version has not scored yet.
    fn score_pending(&self, serving: &Serving) -> Result<usize, ServiceError> {
        let mut store = self.store.write().expect("store lock");
        let done = store.scores.get(serving.version());
        let records: Vec<ScoreRecord> = store
            .corpus
            .changes
            .iter()
            .filter(|c| done.is_none_or(|m| !m.contains_key(&c.id)))
            .map(|c| ScoreRecord {
                change_id: c.id.clone(),
                model_version: serving.version().to_string(),
                score: serving.score(c),
            })
            .collect();
        store.add_scores(records)
    }

    /// Validates a raw change payload with field-level detail.
    pub fn validate_change(&self, payload: Value) -> Result<ChangeTicket, ServiceError> {
        let raw = payload.to_string();
        let mut outcome = ingest_values::<ChangeTicket>([(1, raw, Some(payload))]);
        if let Some(r) = outcome.rejections.pop() {
            return Err(ServiceError::Validation {
                message: match &r.field {
                    Some(f) => format!("field `{f}`: {}", r.reason_code.as_str()),
                    None => r.reason_code.as_str().to_string(),
                },
                details: json!({"field": r.field, "reason": r.reason_code}),
            });
        }
        Ok(outcome.accepted.pop().expect("one row accepted"))
    }

    pub fn score(&self, payload: Value) -> Result<ScoreResponse, ServiceError> {
        let change = self.validate_change(payload)?;
        let serving = self.require_serving()?;
        let (score, base_value, top) = serving.explain(&change)?;
        let threshold = self.operating_threshold(&serving, None);
        Ok(ScoreResponse {
            change_id: change.id,
            score,
            band: self.band(score),
            flagged: score >= threshold,
            threshold,
            base_value,
            top_attributions: top,
            model_version: serving.version().to_string(),
        })
    }

    /// Stored scores of the active version for changes starting in
    /// `[start, end)`, highest first, ties by change id.
    pub fn queue(
        &self,
        start: Option<DateTime<Utc>>,
        end: Option<DateTime<Utc>>,
        threshold: Option<u8>,
    ) -> Result<QueueResponse, ServiceError> {
        if let (Some(s), Some(e)) = (start, end) {
            if s >= e {
                return Err(ServiceError::BadRequest("window start must precede end".into()));
            }
        }
        if threshold.is_some_and(|t| t > 100) {
            return Err(ServiceError::BadRequest("threshold must be within 0..=100".into()));
        }
        let serving = self.require_serving()?;
        let threshold = self.operating_threshold(&serving, threshold);
        let labels = self.labels.read().expect("labels lock").clone();
        let store = self.store.read().expect("store lock");
        let mut items: Vec<QueueItem> = match store.scores.get(serving.version()) {
            None => Vec::new(),
            Some(scores) => store
                .corpus
                .changes
                .iter()
                .filter(|c| start.is_none_or(|s| c.start_time >= s) && end.is_none_or(|e| c.start_time < e))
                .filter_map(|c| {
                    let score = *scores.get(&c.id)?;
                    Some(QueueItem {
                        change_id: c.id.clone(),
                        score,
                        band: self.band(score),
                        flagged: score >= threshold,
                        label_if_known: labels.as_ref().and_then(|l| l.get(&c.id).copied()),
                        start_time: c.start_time,
                    })
                })
                .collect(),
        };
        items.sort_by(|a, b| b.score.cmp(&a.score).then_with(|| a.change_id.cmp(&b.change_id)));
        Ok(QueueResponse {
            model_version: serving.version().to_string(),
            threshold,
            items,
        })
    }

    pub fn ingest(&self, req: IngestRequest) -> Result<IngestResponse, ServiceError> {
        fn rows(values: Vec<Value>) -> Vec<(usize, String, Option<Value>)> {
            values
                .into_iter()
                .enumerate()
                .map(|(i, v)| (i + 1, v.to_string(), Some(v)))
                .collect()
        }
        let mut resp = IngestResponse::default();
        let has_incidents = !req.incidents.is_empty();
        {
            let mut store = self.store.write().expect("store lock");
            let changes = ingest_values::<ChangeTicket>(rows(req.changes));
            let (fresh, dup): (Vec<_>, Vec<_>) = changes
                .accepted
                .into_iter()
                .enumerate()
                .partition(|(_, c)| !store.change_pos.contains_key(&c.id));
            let mut rejections = changes.rejections;
            rejections.extend(dup.into_iter().map(|(_, c)| Rejection {
                line_number: 0,
                reason_code: changerisk::corpus::RejectReason::DuplicateId,
                raw_excerpt: c.id.clone(),
                field: Some("id".into()),
            }));
            resp.changes_accepted = store.add_changes(fresh.into_iter().map(|(_, c)| c).collect())?.len();
            if !rejections.is_empty() {
                resp.rejections.insert("changes".into(), rejections);
            }

            let incidents = ingest_values::<IncidentTicket>(rows(req.incidents));
            resp.incidents_accepted = incidents.accepted.len();
            store.add_incidents(incidents.accepted)?;
            if !incidents.rejections.is_empty() {
                resp.rejections.insert("incidents".into(), incidents.rejections);
            }

            let releases = ingest_values::<ReleaseRecord>(rows(req.releases));
            resp.releases_accepted = releases.accepted.len();
            store.add_releases(releases.accepted)?;
            if !releases.rejections.is_empty() {
                resp.rejections.insert("releases".into(), releases.rejections);
            }
        }
        if has_incidents {
            self.refresh_labels()?;
        }
        if let Some(serving) = self.serving() {
            // Team aggregates read the stored history, so refresh them first.
            let serving = if serving.schema.include_team_features
                && (resp.changes_accepted + resp.incidents_accepted + resp.releases_accepted) > 0
            {
                let fresh = Arc::new(Serving::new(
                    serving.entry.clone(),
                    serving.model.clone(),
                    serving.schema.clone(),
                    self.team_index(&serving.schema)?,
                ));
                let mut slot = self.serving.write().expect("serving lock");
                if slot.as_ref().is_some_and(|s| s.version() == fresh.version()) {
                    *slot = Some(fresh.clone());
                }
                fresh
            } else {
                serving
            };
            resp.scored = self.score_pending(&serving)?;
        }
        Ok(resp)
    }

    pub fn feedback(&self, req: FeedbackRequest) -> Result<FeedbackEvent, ServiceError> {
        let mut store = self.store.write().expect("store lock");
        if !store.is_known_change(&req.change_id) {
            return Err(ServiceError::NotFound(format!("change {}", req.change_id)));
        }
        if req.reviewer.trim().is_empty() {
            return Err(ServiceError::Validation {
                message: "field `reviewer`: empty".into(),
                details: json!({"field": "reviewer", "reason": "invalid_value"}),
            });
        }
        let event = FeedbackEvent {
            sequence: 0,
            change_id: req.change_id,
            verdict: req.verdict,
            decision: req.decision,
            reviewer: req.reviewer,
            timestamp: req.timestamp.unwrap_or_else(now),
            model_version: req.model_version.or_else(|| self.active_version()),
        };
        store.add_feedback(event)
    }

    pub fn feedback_for(&self, change_id: Option<&str>) -> Vec<FeedbackEvent> {
        let store = self.store.read().expect("store lock");
        store
            .feedback
            .iter()
            .filter(|f| change_id.is_none_or(|c| f.change_id == c))
            .cloned()
            .collect()
    }

    pub fn metrics(&self) -> Result<Value, ServiceError> {
        let store = self.store.read().expect("store lock");
        Ok(store.metrics()?.unwrap_or_else(|| json!({"windows": []})))
    }

    pub fn models(&self) -> ModelListing {
        let reg = self.registry.read().expect("registry lock");
        ModelListing {
            active: reg.active().cloned(),
            entries: reg.entries(),
        }
    }

    /// Adds a model to the registry without activating it.
    pub fn register(&self, model: &TrainedModel, schema: &FeatureSchema) -> Result<(ModelRegistryEntry, bool), ServiceError> {
        self.registry.write().expect("registry lock").register(model, schema, now())
    }

    /// Trains on the stored corpus and registers the result, inactive.
    pub async fn retrain(self: &Arc<Self>) -> Result<Value, ServiceError> {
        let _guard = self.lifecycle.lock().await;
        let corpus = {
            let store = self.store.read().expect("store lock");
            if store.corpus.incidents.is_empty() {
                return Err(ServiceError::Validation {
                    message: "retrain needs ingested incidents to label changes".into(),
                    details: json!({"changes": store.corpus.changes.len(), "incidents": 0}),
                });
            }
            store.corpus.clone()
        };
        let state = Arc::clone(self);
        let run = tokio::task::spawn_blocking(move || {
            let cfg = &state.config.pipeline;
            let prep = prepare(corpus, cfg)?;
            run_pipeline(&prep, &state.rules, &cfg.features, cfg)
        })
        .await
        .map_err(|e| ServiceError::Storage(format!("retrain task: {e}")))??;
        let (entry, created) = self.register(&run.fitted.model, &run.fitted.schema)?;
        Ok(json!({
            "entry": entry,
            "created": created,
            "model_report": run.model_report,
            "baseline_report": run.baseline_report,
        }))
    }

    /// Swaps the serving model. With `expected_active` given (or captured at
    /// arrival when omitted), a mismatch against the current active version
    /// is a conflict, so of two racing activations exactly one wins.
    pub async fn activate(&self, version: &str, req: ActivateRequest) -> Result<ModelRegistryEntry, ServiceError> {
        let expected = req
            .expected_active
            .unwrap_or_else(|| self.registry.read().expect("registry lock").active_version().map(str::to_string));
        let _guard = self.lifecycle.lock().await;
        let entry = {
            let reg = self.registry.read().expect("registry lock");
            let entry = reg
                .get(version)
                .cloned()
                .ok_or_else(|| ServiceError::NotFound(format!("model version {version}")))?;
            let current = reg.active_version().map(str::to_string);
            if current != expected {
                return Err(ServiceError::Conflict(format!(
                    "active model is {}, request expected {}",
                    current.as_deref().unwrap_or("none"),
                    expected.as_deref().unwrap_or("none")
                )));
            }
            entry
        };
        let serving = self.build_serving(entry)?;
        let entry = self.registry.write().expect("registry lock").record_activation(version, now())?;
        let serving = Arc::new(Serving { entry: entry.clone(), ..serving });
        *self.serving.write().expect("serving lock") = Some(Arc::clone(&serving));
        let scored = self.score_pending(&serving)?;
        tracing::info!(version, scored, "activated model");
        Ok(entry)
    }
}
