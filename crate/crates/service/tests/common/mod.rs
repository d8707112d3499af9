#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use changerisk::harness::{prepare, run_pipeline, synth_generate, PipelineConfig, SynthConfig};
use changerisk::rulebase::RuleConfig;
use changerisk::{Corpus, FeatureSchema, TrainedModel};
use changerisk_service::{AppState, IngestRequest, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub struct Fixture {
    pub corpus: Corpus,
    /// Three distinct models: text-only, with team features, text-only with
    /// more trees.
    pub models: Vec<(TrainedModel, FeatureSchema)>,
}

pub fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let corpus = synth_generate(&SynthConfig {
            n_changes: 3000,
            seed: 11,
            ..SynthConfig::default()
        })
        .expect("synthetic corpus");
        let mut cfg = PipelineConfig::default();
        cfg.hyperparams.n_trees = 20;
        cfg.hyperparams.min_weighted_samples_per_leaf = 20.0;
        let prep = prepare(corpus.clone(), &cfg).expect("prepare");
        let rules = RuleConfig::example();
        let mut models = Vec::new();
        for (team, trees) in [(false, 20), (true, 20), (false, 25)] {
            let mut features = cfg.features.clone();
            features.include_team_features = team;
            let mut cfg = cfg.clone();
            cfg.hyperparams.n_trees = trees;
            let run = run_pipeline(&prep, &rules, &features, &cfg).expect("pipeline");
            models.push((run.fitted.model, run.fitted.schema));
        }
        let mut versions: Vec<_> = models.iter().map(|m| m.0.model_version.clone()).collect();
        versions.sort();
        versions.dedup();
        assert_eq!(versions.len(), 3);
        Fixture { corpus, models }
    })
}

pub fn config(dir: &std::path::Path) -> ServiceConfig {
    ServiceConfig {
        data_dir: dir.join("data"),
        static_dir: dir.join("static"),
        ..ServiceConfig::default()
    }
}

pub fn ingest_request(corpus: &Corpus) -> IngestRequest {
    fn values<T: serde::Serialize>(rows: &[T]) -> Vec<Value> {
        rows.iter().map(|r| serde_json::to_value(r).unwrap()).collect()
    }
    IngestRequest {
        changes: values(&corpus.changes),
        incidents: values(&corpus.incidents),
        releases: values(&corpus.releases),
    }
}

/// A state with the fixture corpus ingested and both models registered.
pub fn loaded_state(dir: &std::path::Path) -> Arc<AppState> {
    let fx = fixture();
    let state = AppState::open(config(dir)).expect("open state");
    state.ingest(ingest_request(&fx.corpus)).expect("ingest");
    for (m, s) in &fx.models {
        state.register(m, s).expect("register");
    }
    state
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(v) => Body::from(v.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}
