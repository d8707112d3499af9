//! HTTP service for change risk scoring: scores with attributions, a ranked
//! review queue, reviewer feedback, published backtest metrics and the model
//! lifecycle, persisted as append-only files.

pub mod config;
pub mod error;
pub mod registry;
pub mod state;
pub mod store;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, Utc};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

pub use config::ServiceConfig;
pub use error::ServiceError;
pub use registry::{EntryStatus, ModelRegistryEntry, Registry};
pub use state::{ActivateRequest, AppState, FeedbackRequest, IngestRequest, QueueResponse, ScoreResponse};
pub use store::{publish_metrics, store_digest, FeedbackEvent};

/// Header carrying the static token when one is configured.
pub const TOKEN_HEADER: &str = "x-api-token";

type Shared = Arc<AppState>;

fn parse_body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ServiceError> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| ServiceError::BadRequest(format!("malformed JSON: {e}")))?;
    serde_json::from_value(value).map_err(|e| ServiceError::Validation {
        message: e.to_string(),
        details: json!({"reason": "invalid_value"}),
    })
}

fn parse_instant(key: &str, raw: &str) -> Result<DateTime<Utc>, ServiceError> {
    changerisk::corpus::timestamp::parse(raw)
        .or_else(|| {
            NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d")
                .ok()
                .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc())
        })
        .ok_or_else(|| ServiceError::BadRequest(format!("{key}: cannot parse `{raw}` as a date or timestamp")))
}

async fn ingest_changes(State(st): State<Shared>, body: Bytes) -> Result<Response, ServiceError> {
    // A bare array is a batch of changes.
    let value: serde_json::Value =
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(format!("malformed JSON: {e}")))?;
    let req = match value {
        serde_json::Value::Array(changes) => IngestRequest {
            changes,
            ..Default::default()
        },
        other => serde_json::from_value(other).map_err(|e| ServiceError::Validation {
            message: e.to_string(),
            details: json!({"reason": "invalid_value"}),
        })?,
    };
    let out = st.ingest(req)?;
    Ok((StatusCode::OK, Json(out)).into_response())
}

async fn score(State(st): State<Shared>, body: Bytes) -> Result<Json<ScoreResponse>, ServiceError> {
    let value: serde_json::Value =
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(format!("malformed JSON: {e}")))?;
    st.score(value).map(Json)
}

#[derive(Debug, Deserialize)]
struct QueueParams {
    start: Option<String>,
    end: Option<String>,
    threshold: Option<String>,
}

async fn queue(State(st): State<Shared>, Query(q): Query<QueueParams>) -> Result<Json<QueueResponse>, ServiceError> {
    let start = q.start.as_deref().map(|s| parse_instant("start", s)).transpose()?;
    let end = q.end.as_deref().map(|s| parse_instant("end", s)).transpose()?;
    let threshold = q
        .threshold
        .as_deref()
        .map(|t| {
            t.trim()
                .parse::<u8>()
                .map_err(|_| ServiceError::BadRequest(format!("threshold: `{t}` is not an integer in 0..=100")))
        })
        .transpose()?;
    st.queue(start, end, threshold).map(Json)
}

async fn post_feedback(State(st): State<Shared>, body: Bytes) -> Result<Response, ServiceError> {
    let req: FeedbackRequest = parse_body(&body)?;
    let event = st.feedback(req)?;
    Ok((StatusCode::CREATED, Json(event)).into_response())
}

#[derive(Debug, Deserialize)]
struct FeedbackParams {
    change_id: Option<String>,
}

async fn list_feedback(State(st): State<Shared>, Query(q): Query<FeedbackParams>) -> Json<Vec<FeedbackEvent>> {
    Json(st.feedback_for(q.change_id.as_deref()))
}

async fn metrics(State(st): State<Shared>) -> Result<Json<serde_json::Value>, ServiceError> {
    st.metrics().map(Json)
}

async fn get_model(State(st): State<Shared>) -> Json<state::ModelListing> {
    Json(st.models())
}

async fn retrain(State(st): State<Shared>) -> Result<Response, ServiceError> {
    let out = st.retrain().await?;
    let status = if out["created"] == json!(true) {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(out)).into_response())
}

async fn activate(
    State(st): State<Shared>,
    Path(version): Path<String>,
    body: Bytes,
) -> Result<Json<ModelRegistryEntry>, ServiceError> {
    let req: ActivateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ActivateRequest::default()
    } else {
        parse_body(&body)?
    };
    st.activate(&version, req).await.map(Json)
}

async fn require_token(State(st): State<Shared>, req: Request, next: Next) -> Response {
    if let Some(token) = &st.config.token {
        let sent = req.headers().get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
        if sent != Some(token.as_str()) {
            return ServiceError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

async fn not_found() -> ServiceError {
    ServiceError::NotFound("no such route".into())
}

/// All routes over `state`. Static assets are served from
/// `config.static_dir` under `/ui`.
pub fn router(state: Shared) -> Router {
    let api = Router::new()
        .route("/changes", post(ingest_changes))
        .route("/score", post(score))
        .route("/queue", get(queue))
        .route("/feedback", post(post_feedback).get(list_feedback))
        .route("/metrics/windows", get(metrics))
        .route("/model", get(get_model))
        .route("/model/retrain", post(retrain))
        .route("/model/{version}/activate", post(activate))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    let ui = ServeDir::new(&state.config.static_dir).append_index_html_on_directories(true);
    Router::new()
        .nest("/v1", api)
        .nest_service("/ui", ui)
        .route("/healthz", get(|| async { "ok" }))
        .fallback(not_found)
        .with_state(state)
}

/// Binds `config.listen` and serves until ctrl-c.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let listen = config.listen;
    serve_state(AppState::open(config)?, listen).await
}

/// Serves an already opened state until ctrl-c.
pub async fn serve_state(state: Shared, listen: std::net::SocketAddr) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
