//! JSON-over-HTTP front end to [`SessionService`].

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use freezekit::log::{to_jsonl_string, write_csv, SessionLog};
use freezekit::Error as CoreError;
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::error::PlatformError;
use crate::service::{ChoiceRequest, ConfidenceRequest, CreateRequest, ExportFilter, SessionService};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
pub const SESSION_COUNT_HEADER: &str = "x-session-count";

impl IntoResponse for PlatformError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}

type ApiResult<T> = Result<T, PlatformError>;

/// Body parsing with errors in the service's own shape rather than axum's plain-text rejections.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| {
        CoreError::Parse {
            line: e.line(),
            message: e.to_string(),
        }
        .into()
    })
}

fn header_key(headers: &HeaderMap) -> Option<String> {
    headers
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(String::from)
}

pub fn router(service: Arc<SessionService>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create))
        .route("/sessions/{id}/directive", get(directive))
        .route("/sessions/{id}/choice", post(choice))
        .route("/sessions/{id}/confidence", post(confidence))
        .route("/sessions/{id}/export", get(export_one))
        .route("/export", get(export_many))
        .fallback(|| async { PlatformError::NotFound("route".into()) })
        .with_state(service)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn create(State(svc): State<Arc<SessionService>>, body: Bytes) -> ApiResult<Response> {
    let req: CreateRequest = parse_body(&body)?;
    let view = svc.create(req)?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn directive(State(svc): State<Arc<SessionService>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(svc.view(&id)?).into_response())
}

async fn choice(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let mut req: ChoiceRequest = parse_body(&body)?;
    if req.idempotency_key.is_none() {
        req.idempotency_key = header_key(&headers);
    }
    let svc2 = svc.clone();
    let resp = tokio::task::spawn_blocking(move || svc2.submit_choice(&id, req))
        .await
        .map_err(|e| PlatformError::BadRequest(e.to_string()))??;
    Ok(Json(resp).into_response())
}

async fn confidence(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let mut req: ConfidenceRequest = parse_body(&body)?;
    if req.idempotency_key.is_none() {
        req.idempotency_key = header_key(&headers);
    }
    let resp = tokio::task::spawn_blocking(move || svc.submit_confidence(&id, req))
        .await
        .map_err(|e| PlatformError::BadRequest(e.to_string()))??;
    Ok(Json(resp).into_response())
}

fn export_response(logs: &[SessionLog], format: Option<&str>) -> ApiResult<Response> {
    let (content_type, body) = match format.unwrap_or("jsonl") {
        "jsonl" => ("application/x-ndjson", to_jsonl_string(logs).into_bytes()),
        "csv" => {
            let mut buf = Vec::new();
            write_csv(logs, &mut buf)?;
            ("text/csv", buf)
        }
        other => {
            return Err(PlatformError::BadRequest(format!(
                "unknown export format `{other}`; use jsonl or csv"
            )))
        }
    };
    let mut resp = body.into_response();
    let headers = resp.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static(content_type));
    headers.insert(SESSION_COUNT_HEADER, HeaderValue::from(logs.len()));
    Ok(resp)
}

async fn export_one(
    State(svc): State<Arc<SessionService>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let log = svc.export_session(&id)?;
    export_response(&[log], q.get("format").map(String::as_str))
}

async fn export_many(
    State(svc): State<Arc<SessionService>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let filter = ExportFilter::parse(q.get("filter").map(String::as_str).unwrap_or(""))?;
    export_response(&svc.export(&filter), q.get("format").map(String::as_str))
}

/// Serves until ctrl-c.
pub async fn serve(service: Arc<SessionService>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
