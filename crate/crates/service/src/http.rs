//! JSON HTTP API over an [`Engine`].

use std::sync::Arc;

use axum::body::Body;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use serde_json::json;

use crate::engine::{Engine, DEFAULT_PAGE_SIZE};
use crate::error::ServiceError;
use crate::model::{AdjudicationRequest, ReviewStatus, SubmittedResponse};

pub const REVIEWER_HEADER: &str = "x-reviewer-id";

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::Unconfigured => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::PayloadTooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) | ServiceError::DuplicateResponse(_) => StatusCode::CONFLICT,
            ServiceError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::InjectedFault(_)
            | ServiceError::Storage { .. }
            | ServiceError::CorruptLog { .. }
            | ServiceError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": self.to_string() });
        match &self {
            ServiceError::Conflict(existing) => body["existing"] = json!(existing),
            ServiceError::PayloadTooLarge { limit, .. } => body["limit_bytes"] = json!(limit),
            _ => {}
        }
        if status.is_server_error() && status != StatusCode::SERVICE_UNAVAILABLE {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(body)).into_response()
    }
}

fn bad_request(message: String) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "error": message }))).into_response()
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>, limit: usize) -> Result<T, Response> {
    match body {
        Ok(Json(v)) => Ok(v),
        Err(JsonRejection::BytesRejection(e)) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => {
            Err((
                StatusCode::PAYLOAD_TOO_LARGE,
                Json(json!({
                    "error": format!("request body exceeds the limit of {limit} bytes"),
                    "limit_bytes": limit,
                })),
            )
                .into_response())
        }
        Err(e) => Err(bad_request(e.body_text())),
    }
}

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
    body_limit: usize,
}

/// Request-body ceiling for an engine whose texts may be up to `max_text_bytes`.
pub fn body_limit_for(max_text_bytes: usize) -> usize {
    max_text_bytes * 2 + 64 * 1024
}

pub fn router(engine: Arc<Engine>, max_text_bytes: usize) -> Router {
    let body_limit = body_limit_for(max_text_bytes);
    Router::new()
        .route("/v1/responses", post(submit))
        .route("/v1/queue", get(list_queue))
        .route("/v1/queue/{fragment_id}", get(get_item))
        .route("/v1/queue/{fragment_id}/adjudication", post(adjudicate))
        .route("/v1/calibration", get(get_calibration).put(put_calibration))
        .route("/v1/metrics", get(metrics))
        .route("/v1/export", get(export))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(AppState { engine, body_limit })
}

#[derive(Deserialize)]
struct SubmitBody {
    response_id: String,
    item_id: String,
    text: String,
}

async fn submit(State(app): State<AppState>, body: Result<Json<SubmitBody>, JsonRejection>) -> Response {
    let body = match json_body(body, app.body_limit) {
        Ok(b) => b,
        Err(r) => return r,
    };
    let response = SubmittedResponse {
        response_id: body.response_id,
        item_id: body.item_id,
        text: body.text,
        received_at: Utc::now(),
    };
    let engine = app.engine.clone();
    match tokio::task::spawn_blocking(move || engine.submit(&response)).await {
        Ok(Ok(decisions)) => Json(json!({ "decisions": decisions })).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({ "error": format!("scoring task failed: {e}") })),
        )
            .into_response(),
    }
}

#[derive(Deserialize)]
struct QueueQuery {
    status: Option<String>,
    page: Option<usize>,
    page_size: Option<usize>,
}

async fn list_queue(State(app): State<AppState>, query: Result<Query<QueueQuery>, QueryRejection>) -> Response {
    let Query(q) = match query {
        Ok(q) => q,
        Err(e) => return bad_request(e.body_text()),
    };
    let status = match q.status.as_deref() {
        None | Some("pending") => Some(ReviewStatus::Pending),
        Some("adjudicated") => Some(ReviewStatus::Adjudicated),
        Some("all") => None,
        Some(other) => return bad_request(format!("unknown status {other:?}; use pending, adjudicated or all")),
    };
    match app
        .engine
        .list_queue(status, q.page.unwrap_or(1), q.page_size.unwrap_or(DEFAULT_PAGE_SIZE))
    {
        Ok(page) => Json(page).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn get_item(State(app): State<AppState>, Path(fragment_id): Path<String>) -> Response {
    match app.engine.item(&fragment_id) {
        Some(item) => Json(item).into_response(),
        None => ServiceError::NotFound(fragment_id).into_response(),
    }
}

async fn adjudicate(
    State(app): State<AppState>,
    Path(fragment_id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<AdjudicationRequest>, JsonRejection>,
) -> Response {
    let mut req = match json_body(body, app.body_limit) {
        Ok(b) => b,
        Err(r) => return r,
    };
    if req.reviewer_id.is_empty() {
        if let Some(h) = headers.get(REVIEWER_HEADER).and_then(|v| v.to_str().ok()) {
            req.reviewer_id = h.to_string();
        }
    }
    match app.engine.adjudicate(&fragment_id, &req) {
        Ok(item) => Json(item).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn get_calibration(State(app): State<AppState>) -> Response {
    match app.engine.calibration() {
        Ok(view) => Json(view).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Deserialize)]
struct CalibrationBody {
    model: String,
    p: f64,
}

async fn put_calibration(State(app): State<AppState>, body: Result<Json<CalibrationBody>, JsonRejection>) -> Response {
    let body = match json_body(body, app.body_limit) {
        Ok(b) => b,
        Err(r) => return r,
    };
    match app.engine.set_calibration(&body.model, body.p) {
        Ok(view) => Json(view).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn metrics(State(app): State<AppState>) -> Response {
    Json(app.engine.metrics()).into_response()
}

#[derive(Deserialize)]
struct ExportQuery {
    since: Option<DateTime<Utc>>,
}

async fn export(State(app): State<AppState>, query: Result<Query<ExportQuery>, QueryRejection>) -> Response {
    let Query(q) = match query {
        Ok(q) => q,
        Err(e) => return bad_request(e.body_text()),
    };
    Response::builder()
        .header(header::CONTENT_TYPE, "application/x-ndjson")
        .body(Body::from(app.engine.export_jsonl(q.since)))
        .expect("static headers are valid")
}
