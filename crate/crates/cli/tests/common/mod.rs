#![allow(dead_code)]

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, Sender};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use gam_cli::service::{router, AppState};
use gam_core::modelbackend::{BackendError, ChatExchange};
use gam_core::{Engine, EngineSettings, ModelBackend, ScriptRule, ScriptedBackend, SharedEngine};
use serde_json::Value;
use tower::ServiceExt;

pub fn service_rules() -> Vec<ScriptRule> {
    vec![
        ScriptRule::failing(
            gam_core::modelbackend::Matcher::pattern("^TASK: HEADER.*poison").unwrap(),
            BackendError::Transport("upstream unavailable".into()),
        ),
        ScriptRule::pattern("^TASK: HEADER", "h"),
        ScriptRule::pattern("^TASK: MEMORIZE", "memo"),
        ScriptRule::pattern(
            "^TASK: PLAN",
            r#"{"calls":[{"tool":"page_id","ids":[0,1]}]}"#,
        ),
        ScriptRule::failing(
            gam_core::modelbackend::Matcher::pattern("^TASK: INTEGRATE.*explode").unwrap(),
            BackendError::Status {
                status: 503,
                body: "overloaded".into(),
            },
        ),
        ScriptRule::pattern("^TASK: INTEGRATE", r#"{"text":"ok","cited":[0,1]}"#),
        ScriptRule::pattern("^TASK: REFLECT", r#"{"sufficient":true}"#),
    ]
}

/// Holds every HEADER call while armed until the test releases it.
pub struct Gate {
    pub armed: AtomicBool,
    entered: Mutex<Sender<()>>,
    release: Mutex<Receiver<()>>,
    inner: ScriptedBackend,
}

impl Gate {
    pub fn new(inner: ScriptedBackend) -> (Arc<Gate>, Receiver<()>, Sender<()>) {
        let (entered_tx, entered_rx) = std::sync::mpsc::channel();
        let (release_tx, release_rx) = std::sync::mpsc::channel();
        let gate = Arc::new(Gate {
            armed: AtomicBool::new(false),
            entered: Mutex::new(entered_tx),
            release: Mutex::new(release_rx),
            inner,
        });
        (gate, entered_rx, release_tx)
    }
}

impl ModelBackend for Gate {
    fn complete(&self, ex: &ChatExchange) -> Result<String, BackendError> {
        let is_header = ex
            .last_user_message()
            .is_some_and(|m| m.starts_with("TASK: HEADER"));
        if is_header && self.armed.load(Ordering::SeqCst) {
            let _ = self.entered.lock().unwrap().send(());
            let _ = self.release.lock().unwrap().recv();
        }
        self.inner.complete(ex)
    }
}

pub fn app(backend: Arc<dyn ModelBackend>) -> Router {
    router(AppState {
        engine: Arc::new(SharedEngine::new(Engine::new(EngineSettings::default()))),
        backend,
        store_path: None,
    })
}

pub async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<&str>,
) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(
            body.map(|b| Body::from(b.to_string()))
                .unwrap_or_else(Body::empty),
        )
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = axum::body::to_bytes(response.into_body(), usize::MAX)
        .await
        .unwrap();
    let value = serde_json::from_slice(&bytes)
        .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()));
    (status, value)
}

/// Each check is `(name, expected status, actual status)`.
pub async fn status_matrix(app: &Router) -> Vec<(&'static str, StatusCode, StatusCode)> {
    let mut out = Vec::new();
    let mut check = |name, expected, got: StatusCode| out.push((name, expected, got));
    check(
        "healthz",
        StatusCode::OK,
        call(app, "GET", "/healthz", None).await.0,
    );
    check(
        "ingest session 0",
        StatusCode::OK,
        call(
            app,
            "POST",
            "/v1/sessions",
            Some(r#"{"id":0,"content":"the dog is Rex"}"#),
        )
        .await
        .0,
    );
    check(
        "ingest session 1",
        StatusCode::OK,
        call(
            app,
            "POST",
            "/v1/sessions",
            Some(r#"{"id":1,"content":"the cat is Tom"}"#),
        )
        .await
        .0,
    );
    check(
        "malformed session body",
        StatusCode::BAD_REQUEST,
        call(app, "POST", "/v1/sessions", Some("{\"id\":2,"))
            .await
            .0,
    );
    check(
        "session without content",
        StatusCode::BAD_REQUEST,
        call(app, "POST", "/v1/sessions", Some(r#"{"id":2}"#))
            .await
            .0,
    );
    check(
        "out-of-order session",
        StatusCode::CONFLICT,
        call(
            app,
            "POST",
            "/v1/sessions",
            Some(r#"{"id":1,"content":"again"}"#),
        )
        .await
        .0,
    );
    check(
        "backend failure on ingest",
        StatusCode::BAD_GATEWAY,
        call(
            app,
            "POST",
            "/v1/sessions",
            Some(r#"{"id":7,"content":"poison pill"}"#),
        )
        .await
        .0,
    );
    check(
        "memory",
        StatusCode::OK,
        call(app, "GET", "/v1/memory", None).await.0,
    );
    check(
        "known page",
        StatusCode::OK,
        call(app, "GET", "/v1/pages/1", None).await.0,
    );
    check(
        "unknown page",
        StatusCode::NOT_FOUND,
        call(app, "GET", "/v1/pages/99", None).await.0,
    );
    check(
        "non-numeric page id",
        StatusCode::BAD_REQUEST,
        call(app, "GET", "/v1/pages/abc", None).await.0,
    );
    check(
        "research",
        StatusCode::OK,
        call(
            app,
            "POST",
            "/v1/research",
            Some(r#"{"request":"pets","format":"integration-with-page","max_depth":2,"top_k":3}"#),
        )
        .await
        .0,
    );
    check(
        "malformed research body",
        StatusCode::BAD_REQUEST,
        call(app, "POST", "/v1/research", Some("not json")).await.0,
    );
    check(
        "unknown format",
        StatusCode::BAD_REQUEST,
        call(
            app,
            "POST",
            "/v1/research",
            Some(r#"{"request":"pets","format":"poem"}"#),
        )
        .await
        .0,
    );
    check(
        "backend failure on research",
        StatusCode::BAD_GATEWAY,
        call(
            app,
            "POST",
            "/v1/research",
            Some(r#"{"request":"explode"}"#),
        )
        .await
        .0,
    );
    out
}

/// Starts an ingest of session 1 that stalls inside the model call, checks
/// what readers see meanwhile, then lets it finish. Returns a description
/// of the first violated expectation, if any.
pub async fn snapshot_isolation() -> Result<(), String> {
    let (gate, entered, release) = Gate::new(ScriptedBackend::new(service_rules()));
    let app = app(gate.clone());
    let (s, _) = call(
        &app,
        "POST",
        "/v1/sessions",
        Some(r#"{"id":0,"content":"first session"}"#),
    )
    .await;
    if s != StatusCode::OK {
        return Err(format!("seed ingest returned {s}"));
    }
    gate.armed.store(true, std::sync::atomic::Ordering::SeqCst);
    let writer = {
        let app = app.clone();
        tokio::spawn(async move {
            call(
                &app,
                "POST",
                "/v1/sessions",
                Some(r#"{"id":1,"content":"second session"}"#),
            )
            .await
        })
    };
    let entered = tokio::task::spawn_blocking(move || {
        entered.recv_timeout(std::time::Duration::from_secs(10))
    })
    .await
    .unwrap();
    if entered.is_err() {
        return Err("ingest never reached the backend".into());
    }

    let (s, memory) = call(&app, "GET", "/v1/memory", None).await;
    if s != StatusCode::OK || memory.as_array().map(Vec::len) != Some(1) {
        return Err(format!("memory during ingest: {s} {memory}"));
    }
    let (s, _) = call(&app, "GET", "/v1/pages/1", None).await;
    if s != StatusCode::NOT_FOUND {
        return Err(format!("page 1 visible during ingest: {s}"));
    }
    let (s, out) = call(
        &app,
        "POST",
        "/v1/research",
        Some(r#"{"request":"sessions"}"#),
    )
    .await;
    let misses = &out["trace"]["iterations"][0]["executed"][0]["misses"];
    if s != StatusCode::OK || misses != &serde_json::json!([1]) {
        return Err(format!("research during ingest: {s} misses {misses}"));
    }

    release.send(()).unwrap();
    let (s, body) = writer.await.unwrap();
    if s != StatusCode::OK || body["page_ids"] != serde_json::json!([1]) {
        return Err(format!("ingest result: {s} {body}"));
    }
    let (s, out) = call(
        &app,
        "POST",
        "/v1/research",
        Some(r#"{"request":"sessions"}"#),
    )
    .await;
    let misses = &out["trace"]["iterations"][0]["executed"][0]["misses"];
    if s != StatusCode::OK || !misses.is_null() {
        return Err(format!("research after ingest: {s} misses {misses}"));
    }
    Ok(())
}
