mod common;

use std::sync::Arc;

use axum::http::StatusCode;
use common::{app, call, service_rules, snapshot_isolation, status_matrix};
use gam_core::ScriptedBackend;
use serde_json::json;

#[tokio::test]
async fn endpoint_status_matrix() {
    let app = app(Arc::new(ScriptedBackend::new(service_rules())));
    for (name, expected, got) in status_matrix(&app).await {
        assert_eq!(got, expected, "{name}");
    }
}

#[tokio::test]
async fn session_ingest_grows_store() {
    let app = app(Arc::new(ScriptedBackend::new(service_rules())));
    let (s, body) = call(
        &app,
        "POST",
        "/v1/sessions",
        Some(r#"{"id":3,"content":"the dog is Rex"}"#),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, json!({"session_id": 3, "page_ids": [0]}));

    let (_, memory) = call(&app, "GET", "/v1/memory", None).await;
    assert_eq!(
        memory,
        json!([{"session_id": 3, "source_page_ids": [0], "text": "memo"}])
    );

    let (s, page) = call(&app, "GET", "/v1/pages/0", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(page["content"], "the dog is Rex");
    assert_eq!(page["header"], "h");
}

#[tokio::test]
async fn failed_ingest_leaves_state_untouched() {
    let app = app(Arc::new(ScriptedBackend::new(service_rules())));
    call(
        &app,
        "POST",
        "/v1/sessions",
        Some(r#"{"id":0,"content":"a"}"#),
    )
    .await;
    let (s, body) = call(
        &app,
        "POST",
        "/v1/sessions",
        Some(r#"{"id":1,"content":"poison"}"#),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert!(body["error"].as_str().unwrap().contains("upstream"));
    let (_, memory) = call(&app, "GET", "/v1/memory", None).await;
    assert_eq!(memory.as_array().unwrap().len(), 1);
    assert_eq!(
        call(&app, "GET", "/v1/pages/1", None).await.0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn research_returns_context_and_trace() {
    let app = app(Arc::new(ScriptedBackend::new(service_rules())));
    call(
        &app,
        "POST",
        "/v1/sessions",
        Some(r#"{"id":0,"content":"the dog is Rex"}"#),
    )
    .await;
    call(
        &app,
        "POST",
        "/v1/sessions",
        Some(r#"{"id":1,"content":"the cat is Tom"}"#),
    )
    .await;
    let (s, out) = call(
        &app,
        "POST",
        "/v1/research",
        Some(r#"{"request":"pets","format":"integration-with-page"}"#),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(out["format"], "integration-with-page");
    let context = out["context"].as_str().unwrap();
    assert!(context.starts_with("ok"));
    assert!(context.contains("the dog is Rex") && context.contains("the cat is Tom"));
    assert_eq!(out["trace"]["termination"], "sufficient");
}

#[tokio::test]
async fn research_failure_carries_trace() {
    let app = app(Arc::new(ScriptedBackend::new(service_rules())));
    call(
        &app,
        "POST",
        "/v1/sessions",
        Some(r#"{"id":0,"content":"x"}"#),
    )
    .await;
    let (s, body) = call(
        &app,
        "POST",
        "/v1/research",
        Some(r#"{"request":"explode"}"#),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert_eq!(body["trace"]["termination"], "aborted");
    assert_eq!(body["trace"]["request"], "explode");
}

#[tokio::test]
async fn research_body_validation() {
    let app = app(Arc::new(ScriptedBackend::new(service_rules())));
    for body in [
        r#"{"request":""}"#,
        r#"{"request":"x","top_k":0}"#,
        r#"{"request":"x","tools":[]}"#,
        r#"{"request":"x","tools":["grep"]}"#,
        r#"{"request":"x","colour":"red"}"#,
        r#"{"query":"x"}"#,
    ] {
        assert_eq!(
            call(&app, "POST", "/v1/research", Some(body)).await.0,
            StatusCode::BAD_REQUEST,
            "{body}"
        );
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn reads_are_served_from_pre_ingest_snapshot() {
    snapshot_isolation().await.unwrap();
}

#[tokio::test]
async fn committed_ingest_is_persisted() {
    use gam_cli::service::{router, AppState};
    use gam_core::{Engine, EngineSettings, SharedEngine};

    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState {
        engine: Arc::new(SharedEngine::new(Engine::new(EngineSettings::default()))),
        backend: Arc::new(ScriptedBackend::new(service_rules())),
        store_path: Some(dir.path().to_path_buf()),
    });
    call(
        &app,
        "POST",
        "/v1/sessions",
        Some(r#"{"id":0,"content":"the dog is Rex"}"#),
    )
    .await;
    call(
        &app,
        "POST",
        "/v1/sessions",
        Some(r#"{"id":1,"content":"poison"}"#),
    )
    .await;
    let loaded = Engine::load(dir.path(), EngineSettings::default()).unwrap();
    assert_eq!(loaded.state.store.len(), 1);
    assert_eq!(loaded.state.memory.len(), 1);
}
