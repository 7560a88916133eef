use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use freezekit::log::read_jsonl;
use freezekit_platform::api::{router, SESSION_COUNT_HEADER};
use freezekit_platform::service::SessionService;
use freezekit_platform::store::Store;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

struct Resp {
    status: StatusCode,
    count: Option<String>,
    body: Vec<u8>,
}

impl Resp {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap()
    }
}

fn app(dir: &TempDir) -> Router {
    router(Arc::new(SessionService::with_seed(Store::open(dir.path()).unwrap(), 1).unwrap()))
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>, key: Option<&str>) -> Resp {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(k) = key {
        req = req.header("idempotency-key", k);
    }
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let count = resp
        .headers()
        .get(SESSION_COUNT_HEADER)
        .map(|v| v.to_str().unwrap().to_string());
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Resp { status, count, body }
}

fn assert_error_shape(r: &Resp, status: StatusCode, code: &str) {
    assert_eq!(r.status, status, "{}", String::from_utf8_lossy(&r.body));
    let v = r.json();
    assert_eq!(v["code"], code);
    assert!(v["message"].is_string());
    assert!(v.get("details").is_some());
}

async fn create(app: &Router, preset: &str) -> String {
    let r = send(app, "POST", "/sessions", Some(json!({ "preset": preset })), None).await;
    assert_eq!(r.status, StatusCode::CREATED);
    r.json()["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn healthz() {
    let dir = TempDir::new().unwrap();
    let r = send(&app(&dir), "GET", "/healthz", None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["status"], "ok");
}

#[tokio::test]
async fn full_session_over_http() {
    let dir = TempDir::new().unwrap();
    let app = app(&dir);
    let id = create(&app, "exp3_high").await;
    let mut probes = 0;
    loop {
        let v = send(&app, "GET", &format!("/sessions/{id}/directive"), None, None).await.json();
        match v["awaiting"].as_str().unwrap() {
            "complete" => break,
            "confidence" => {
                let r = send(&app, "POST", &format!("/sessions/{id}/confidence"), Some(json!({"rating": 6})), None).await;
                assert_eq!(r.status, StatusCode::OK);
                probes += 1;
            }
            _ => {
                let d = &v["directive"];
                let body = json!({
                    "choice": d["trial_index"].as_u64().unwrap() % 2,
                    "rt_ms": 420,
                    "phase": d["phase"],
                    "trial_index": d["trial_index"],
                    "client_timestamp": "2026-10-15T09:00:00Z",
                });
                let r = send(&app, "POST", &format!("/sessions/{id}/choice"), Some(body), None).await;
                assert_eq!(r.status, StatusCode::OK);
                let outcome = r.json()["outcome"].as_str().unwrap().to_string();
                assert!(outcome == "win" || outcome == "loss");
            }
        }
    }
    assert_eq!(probes, 17);
    let r = send(&app, "GET", &format!("/sessions/{id}/export"), None, None).await;
    assert_eq!(r.count.as_deref(), Some("1"));
    let logs = read_jsonl(r.body.as_slice()).unwrap();
    assert_eq!(logs[0].trials.len(), 60);
    logs[0].validate().unwrap();
    let csv = send(&app, "GET", &format!("/sessions/{id}/export?format=csv"), None, None).await;
    assert_eq!(String::from_utf8(csv.body).unwrap().lines().count(), 61);
}

#[tokio::test]
async fn error_bodies() {
    let dir = TempDir::new().unwrap();
    let app = app(&dir);
    let r = send(&app, "POST", "/sessions", Some(json!({"preset": "nope"})), None).await;
    assert_error_shape(&r, StatusCode::BAD_REQUEST, "unknown_preset");
    assert!(r.json()["details"]["presets"].as_array().unwrap().len() >= 8);

    let r = send(&app, "POST", "/sessions", Some(json!({"config": {"main_trials": 0}})), None).await;
    assert_error_shape(&r, StatusCode::UNPROCESSABLE_ENTITY, "invalid_config");
    assert_eq!(r.json()["details"]["fields"][0]["field"], "main_trials");

    let r = send(&app, "POST", "/sessions", Some(json!({"preset": "exp1_high", "config": {}})), None).await;
    assert_error_shape(&r, StatusCode::BAD_REQUEST, "bad_request");

    let r = send(&app, "GET", "/sessions/nope/directive", None, None).await;
    assert_error_shape(&r, StatusCode::NOT_FOUND, "not_found");

    let id = create(&app, "exp1_high").await;
    let r = send(&app, "POST", &format!("/sessions/{id}/choice"), Some(json!({"choice": "left"})), None).await;
    assert_error_shape(&r, StatusCode::BAD_REQUEST, "parse_error");
    let r = send(&app, "POST", &format!("/sessions/{id}/confidence"), Some(json!({"rating": 3})), None).await;
    assert_error_shape(&r, StatusCode::CONFLICT, "protocol_violation");
    let r = send(&app, "POST", &format!("/sessions/{id}/confidence"), Some(json!({"rating": 9})), None).await;
    assert_error_shape(&r, StatusCode::UNPROCESSABLE_ENTITY, "invalid_config");
    let r = send(&app, "GET", "/nowhere", None, None).await;
    assert_error_shape(&r, StatusCode::NOT_FOUND, "not_found");
}

#[tokio::test]
async fn idempotency_header_deduplicates() {
    let dir = TempDir::new().unwrap();
    let app = app(&dir);
    let id = create(&app, "exp1_normal").await;
    let uri = format!("/sessions/{id}/choice");
    let a = send(&app, "POST", &uri, Some(json!({"choice": 1, "rt_ms": 300})), Some("abc")).await;
    let b = send(&app, "POST", &uri, Some(json!({"choice": 1, "rt_ms": 300})), Some("abc")).await;
    assert_eq!(a.status, StatusCode::OK);
    assert_eq!(a.body, b.body);
    let logs = read_jsonl(send(&app, "GET", &format!("/sessions/{id}/export"), None, None).await.body.as_slice()).unwrap();
    assert_eq!(logs[0].trials.len(), 1);
}

#[tokio::test]
async fn export_filters() {
    let dir = TempDir::new().unwrap();
    let app = app(&dir);
    create(&app, "exp1_high").await;
    create(&app, "exp1_normal").await;
    create(&app, "exp2_normal").await;

    let r = send(&app, "GET", "/export", None, None).await;
    assert_eq!(r.count.as_deref(), Some("3"));
    assert_eq!(read_jsonl(r.body.as_slice()).unwrap().len(), 3);
    let r = send(&app, "GET", "/export?filter=group:normal,condition:implicit", None, None).await;
    assert_eq!(r.count.as_deref(), Some("1"));
    let r = send(&app, "GET", "/export?filter=condition:metacognitive_prompt", None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.count.as_deref(), Some("0"));
    assert!(r.body.is_empty());
    let r = send(&app, "GET", "/export?filter=group", None, None).await;
    assert_error_shape(&r, StatusCode::BAD_REQUEST, "bad_request");
    let r = send(&app, "GET", "/export?format=xml", None, None).await;
    assert_error_shape(&r, StatusCode::BAD_REQUEST, "bad_request");
}

#[tokio::test]
async fn concurrent_sessions_stay_consistent() {
    let dir = TempDir::new().unwrap();
    let app = app(&dir);
    let ids: Vec<String> = create_many(&app).await;
    let mut tasks = Vec::new();
    for id in ids.clone() {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            for _ in 0..9 {
                let r = send(&app, "POST", &format!("/sessions/{id}/choice"), Some(json!({"choice": 0})), None).await;
                assert_eq!(r.status, StatusCode::OK);
            }
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    let r = send(&app, "GET", "/export", None, None).await;
    let logs = read_jsonl(r.body.as_slice()).unwrap();
    assert_eq!(logs.len(), ids.len());
    assert!(logs.iter().all(|l| l.trials.len() == 9));
}

async fn create_many(app: &Router) -> Vec<String> {
    let mut ids = Vec::new();
    for _ in 0..8 {
        ids.push(create(app, "exp2_high").await);
    }
    ids
}
