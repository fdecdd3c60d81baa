//! The HTTP service driven in-process through the router.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::thread;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use humaine::llm::{LlmMode, LlmSettings};
use humaine::service::{router, AppState, ServiceConfig, ServiceModels, SESSIONS_DIR};
use humaine::store::read_events;
use humaine_core::conversation::{EventKind, Timestamp};
use humaine_core::experiment::{pretrain, ExperimentConfig};
use humaine_core::metrics::MetricsConfig;
use humaine_core::profiler::{ActionMode, PpoConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn models() -> ServiceModels {
    static MODELS: OnceLock<ServiceModels> = OnceLock::new();
    MODELS
        .get_or_init(|| {
            let cfg = ExperimentConfig { master_seed: 5, ..ExperimentConfig::default() };
            ServiceModels::from_trained(pretrain(&cfg, &MetricsConfig::default()).unwrap())
        })
        .clone()
}

fn fixed_clock() -> Timestamp {
    Timestamp::from_millis(1_000)
}

fn state_with(dir: &Path, llm: LlmSettings) -> Arc<AppState> {
    let cfg = ServiceConfig {
        data_dir: dir.to_path_buf(),
        seed: 17,
        llm,
        metrics: MetricsConfig::default(),
        ppo: PpoConfig::default(),
        action_mode: ActionMode::Greedy,
        models: models(),
        clock: fixed_clock,
    };
    Arc::new(AppState::new(cfg).unwrap())
}

fn app(dir: &Path) -> Router {
    router(state_with(dir, LlmSettings::default()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    call_raw(app, method, uri, body.map(|b| b.to_string())).await
}

async fn call_raw(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create(app: &Router, body: Value) -> String {
    let (status, v) = call(app, "POST", "/v1/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

async fn send(app: &Router, id: &str, text: &str, sent_ms: u64) -> (StatusCode, Value) {
    let body = json!({ "text": text, "typing_started_ms": sent_ms - 4_000, "sent_ms": sent_ms });
    call(app, "POST", &format!("/v1/sessions/{id}/messages"), Some(body)).await
}

#[tokio::test(flavor = "multi_thread")]
async fn create_returns_questions_and_distinct_ids() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, v) = call(&app, "POST", "/v1/sessions", Some(json!({ "topic": "Personal Finance" }))).await;
    assert_eq!(status, StatusCode::CREATED);
    let n = v["elicitation_questions"].as_array().unwrap().len();
    assert!((2..=3).contains(&n), "{n} questions");
    assert_eq!(v["arm"], "experimental");
    assert_eq!(v["turn_index"], 1);
    let other = create(&app, json!({ "topic": "Personal Finance", "arm": "control" })).await;
    assert_ne!(v["session_id"].as_str().unwrap(), other);
    assert!(dir.path().join(SESSIONS_DIR).join(format!("{other}.events.jsonl")).exists());
}

#[tokio::test(flavor = "multi_thread")]
async fn strict_bodies() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    for body in [
        r#"{"topic":"Personal Finance","colour":"blue"}"#,
        r#"{"topic":"#,
        r#"{}"#,
        r#"{"topic":"Personal Finance","arm":"sideways"}"#,
        r#"{"topic":"Astrology"}"#,
    ] {
        let (status, v) = call_raw(&app, "POST", "/v1/sessions", Some(body.to_string())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}: {v}");
        assert!(v["error"].is_string());
    }
    let id = create(&app, json!({ "topic": "Travel and Culture" })).await;
    let (status, _) = call(&app, "POST", &format!("/v1/sessions/{id}/messages"), Some(json!({ "text": "hi" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "sent_ms is required");
    let (status, _) = send(&app, &id, "   ", 9_000).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_sessions_are_404() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, _) = send(&app, "nope", "hello", 9_000).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/v1/sessions/nope/profile", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/v1/sessions/nope/survey", Some(json!({ "ratings": [3] }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn mock_replies_are_deterministic_for_a_seed() {
    let mut replies = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let app = app(dir.path());
        let id = create(&app, json!({ "topic": "Health and Wellness" })).await;
        let (status, v) = send(&app, &id, "How much sleep do I really need each night?", 9_000).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        assert_eq!(v["turn_index"], 2);
        assert!(!v["reply"].as_str().unwrap().is_empty());
        replies.push(v);
    }
    assert_eq!(replies[0], replies[1]);
}

#[tokio::test(flavor = "multi_thread")]
async fn control_sessions_keep_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, json!({ "topic": "Career Development", "arm": "control" })).await;
    let (_, first) = call(&app, "GET", &format!("/v1/sessions/{id}/profile"), None).await;
    for k in 0..6u64 {
        let text = if k % 2 == 0 { "ok" } else { "Could you go into the negotiation tactics in much more depth please?" };
        let (status, v) = send(&app, &id, text, 10_000 + 5_000 * k).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(v["params"], first["params"]);
        assert_eq!(v["profile_snapshot"]["params"], first["params"]);
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn feedback_rules() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, json!({ "topic": "Personal Finance" })).await;
    let fb = format!("/v1/sessions/{id}/feedback");

    let (status, _) = call(&app, "POST", &fb, Some(json!({ "turn_index": 1, "liked": true }))).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (_, v) = send(&app, &id, "Thanks, what about index funds?", 9_000).await;
    assert_eq!(v["reward"]["liked"], "like");

    let (status, _) = call(&app, "POST", &fb, Some(json!({ "turn_index": 99, "liked": true }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", &fb, Some(json!({ "turn_index": 0, "liked": true }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // last write wins
    for liked in [true, false] {
        let (status, _) = call(&app, "POST", &fb, Some(json!({ "turn_index": 2, "liked": liked }))).await;
        assert_eq!(status, StatusCode::NO_CONTENT);
    }
    let (_, v) = send(&app, &id, "Hmm.", 15_000).await;
    assert_eq!(v["reward"]["liked"], "dislike");
    let (_, v) = send(&app, &id, "And bonds?", 20_000).await;
    assert_eq!(v["reward"]["liked"], "none");

    let (status, _) = call(&app, "POST", &fb, Some(json!({ "turn_index": 1, "liked": "yes" }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn profile_snapshots_follow_turns() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, json!({ "topic": "Technology Trends" })).await;
    let uri = format!("/v1/sessions/{id}/profile");
    let (status, fresh) = call(&app, "GET", &uri, None).await;
    assert_eq!(status, StatusCode::OK);
    for (key, k) in [("complexity_dist", 5.0), ("detail_dist", 3.0), ("style_dist", 2.0)] {
        for p in fresh["profile"][key].as_array().unwrap() {
            assert!((p.as_f64().unwrap() - 1.0 / k).abs() < 1e-9, "{key} not uniform");
        }
    }
    let mut last = Value::Null;
    for k in 0..4u64 {
        let (_, v) = send(&app, &id, "Tell me about edge computing and latency budgets.", 9_000 + 6_000 * k).await;
        last = v["profile_snapshot"].clone();
        let (_, now) = call(&app, "GET", &uri, None).await;
        assert_eq!(now, last);
    }
    assert_eq!(last["turn_index"], 5);
}

#[tokio::test(flavor = "multi_thread")]
async fn survey_closes_the_session() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, json!({ "topic": "Work-Life Balance" })).await;
    let uri = format!("/v1/sessions/{id}/survey");
    let (status, _) = call(&app, "POST", &uri, Some(json!({ "ratings": [] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", &uri, Some(json!({ "ratings": [4, 6] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", &uri, Some(json!({ "ratings": [4, -1] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, v) = call(&app, "POST", &uri, Some(json!({ "ratings": [4, 5, 3] }))).await;
    assert_eq!(status, StatusCode::OK);
    assert!((v["sbs"].as_f64().unwrap() - 4.0).abs() < 1e-12);

    let (status, _) = call(&app, "POST", &uri, Some(json!({ "ratings": [4] }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = send(&app, &id, "one more thing", 9_000).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) =
        call(&app, "POST", &format!("/v1/sessions/{id}/feedback"), Some(json!({ "turn_index": 1, "liked": true }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "GET", &format!("/v1/sessions/{id}/profile"), None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread")]
async fn elicitation_before_the_first_message_only() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, json!({ "topic": "Personal Finance" })).await;
    let uri = format!("/v1/sessions/{id}/elicitation");
    let bad = json!({ "answers": [{ "question": "complexity", "answer": "galaxy-brained" }] });
    assert_eq!(call(&app, "POST", &uri, Some(bad)).await.0, StatusCode::BAD_REQUEST);
    let good = json!({ "answers": [{ "question": "complexity", "answer": "advanced" }, { "question": "style", "answer": "professional" }] });
    assert_eq!(call(&app, "POST", &uri, Some(good.clone())).await.0, StatusCode::NO_CONTENT);
    send(&app, &id, "Start with asset allocation.", 9_000).await;
    assert_eq!(call(&app, "POST", &uri, Some(good)).await.0, StatusCode::CONFLICT);
}

/// Every reply and reward the client saw is in the session's event log.
#[tokio::test(flavor = "multi_thread")]
async fn responses_are_reconstructible_from_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, json!({ "topic": "Education and Learning" })).await;
    let mut seen = Vec::new();
    for k in 0..3u64 {
        let (_, v) = send(&app, &id, "What study techniques actually work for exams?", 9_000 + 5_000 * k).await;
        seen.push(v);
    }
    call(&app, "POST", &format!("/v1/sessions/{id}/survey"), Some(json!({ "ratings": [5, 4] }))).await;
    let events = read_events(&dir.path().join(SESSIONS_DIR).join(format!("{id}.events.jsonl"))).unwrap();
    for v in &seen {
        let turn = v["turn_index"].as_u64().unwrap() as u32;
        let logged = events.iter().find_map(|e| match &e.kind {
            EventKind::BotMessage { turn_index, text } if *turn_index == turn => Some(text.clone()),
            _ => None,
        });
        assert_eq!(logged.as_deref(), v["reply"].as_str());
        let adaptation = events.iter().find_map(|e| match &e.kind {
            EventKind::Adaptation { turn_index, params, .. } if *turn_index == turn => Some(serde_json::to_value(params).unwrap()),
            _ => None,
        });
        assert_eq!(adaptation.as_ref(), Some(&v["params"]));
    }
    assert!(matches!(events.last().unwrap().kind, EventKind::SessionEnd));
}

const DENSE: &str = "Considering the heterogeneous macroeconomic indicators, how should a diversified \
    portfolio rebalance between duration-sensitive sovereign instruments and volatility-adjusted equity \
    factor exposures when inflation expectations, term premia, and central-bank balance-sheet policies \
    diverge persistently across jurisdictions?";

/// A user who writes long technical messages, asks for advanced language and
/// likes every reply never sees the language get simpler.
#[tokio::test(flavor = "multi_thread")]
async fn complexity_never_drops_for_a_consistent_expert() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, json!({ "topic": "Personal Finance" })).await;
    let answers = json!({ "answers": [
        { "question": "complexity", "answer": "advanced" },
        { "question": "detail", "answer": "comprehensive" },
        { "question": "style", "answer": "professional" },
    ] });
    call(&app, "POST", &format!("/v1/sessions/{id}/elicitation"), Some(answers)).await;
    let mut levels = Vec::new();
    let mut turn = 1;
    for k in 0..20u64 {
        let (status, _) =
            call(&app, "POST", &format!("/v1/sessions/{id}/feedback"), Some(json!({ "turn_index": turn, "liked": true })))
                .await;
        assert_eq!(status, StatusCode::NO_CONTENT);
        let (status, v) = send(&app, &id, DENSE, 60_000 + 45_000 * k).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        turn = v["turn_index"].as_u64().unwrap();
        levels.push(v["params"]["complexity_level"].as_u64().unwrap());
    }
    assert!(levels.windows(2).all(|w| w[0] <= w[1]), "{levels:?}");
    assert!(*levels.last().unwrap() >= 4, "{levels:?}");
}

#[tokio::test(flavor = "multi_thread")]
async fn returning_users_keep_their_agent() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let first = create(&app, json!({ "topic": "Personal Finance", "user_id": "u1" })).await;
    let (status, _) = call(&app, "POST", "/v1/sessions", Some(json!({ "topic": "Personal Finance", "user_id": "u1" }))).await;
    assert_eq!(status, StatusCode::CONFLICT, "one open session per user");
    for k in 0..3u64 {
        send(&app, &first, DENSE, 9_000 + 5_000 * k).await;
    }
    call(&app, "POST", &format!("/v1/sessions/{first}/survey"), Some(json!({ "ratings": [5] }))).await;

    let (status, v) = call(&app, "POST", "/v1/sessions", Some(json!({ "topic": "Technology Trends", "user_id": "u1" }))).await;
    assert_eq!(status, StatusCode::CREATED);
    let (_, fresh) = call(&app, "POST", "/v1/sessions", Some(json!({ "topic": "Technology Trends" }))).await;
    assert_ne!(v["profile_snapshot"]["profile"], fresh["profile_snapshot"]["profile"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn health_reports_mode_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let state = state_with(dir.path(), LlmSettings::default());
    let hash = state.config_hash().to_string();
    let app = router(state);
    let (status, v) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["mode"], "mock");
    assert_eq!(v["config_hash"], hash);
    assert_eq!(hash.len(), 64);
}

#[tokio::test(flavor = "multi_thread")]
async fn storage_failure_is_503_and_rolls_back() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, json!({ "topic": "Personal Finance" })).await;
    let file = dir.path().join(SESSIONS_DIR).join(format!("{id}.events.jsonl"));
    let saved = std::fs::read(&file).unwrap();
    std::fs::remove_file(&file).unwrap();
    std::fs::create_dir(&file).unwrap();
    let (status, _) = send(&app, &id, "Is this thing on?", 9_000).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);

    std::fs::remove_dir(&file).unwrap();
    std::fs::write(&file, saved).unwrap();
    let (status, v) = send(&app, &id, "Is this thing on?", 9_500).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["turn_index"], 2, "the failed turn left no trace");
}

/// Answers every completion after `delay_ms`, or with `status` when it is not 200.
fn slow_stub(delay_ms: u64, status: &'static str) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/complete", listener.local_addr().unwrap());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                thread::sleep(Duration::from_millis(delay_ms));
                let reply = r#"{"text":"stub reply","usage":{"prompt_tokens":1,"completion_tokens":2}}"#;
                let msg = format!(
                    "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                    reply.len()
                );
                let _ = stream.write_all(msg.as_bytes());
            });
        }
    });
    url
}

fn live(url: String) -> LlmSettings {
    LlmSettings { mode: LlmMode::Live, url: Some(url), backoff_ms: 10, timeout_ms: 5_000, ..LlmSettings::default() }
}

#[tokio::test(flavor = "multi_thread")]
async fn busy_sessions_get_429_and_readers_see_whole_turns() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state_with(dir.path(), live(slow_stub(400, "200 OK"))));
    let id = create(&app, json!({ "topic": "Personal Finance" })).await;
    let (_, before) = call(&app, "GET", &format!("/v1/sessions/{id}/profile"), None).await;

    let slow = {
        let app = app.clone();
        let id = id.clone();
        tokio::spawn(async move { send(&app, &id, "Walk me through the tax treatment of dividends.", 9_000).await })
    };
    tokio::time::sleep(Duration::from_millis(100)).await;
    let (status, _) = send(&app, &id, "hello?", 9_100).await;
    assert_eq!(status, StatusCode::TOO_MANY_REQUESTS);
    let (_, during) = call(&app, "GET", &format!("/v1/sessions/{id}/profile"), None).await;
    assert_eq!(during, before, "reads during a turn see the previous snapshot");

    let (status, done) = slow.await.unwrap();
    assert_eq!(status, StatusCode::OK);
    assert_eq!(done["reply"], "stub reply");
    let (_, after) = call(&app, "GET", &format!("/v1/sessions/{id}/profile"), None).await;
    assert_eq!(after, done["profile_snapshot"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn gateway_failure_is_502_without_a_reply() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(state_with(dir.path(), live(slow_stub(0, "500 Internal Server Error"))));
    let id = create(&app, json!({ "topic": "Personal Finance" })).await;
    let (status, v) = send(&app, &id, "Anything?", 9_000).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert!(v.get("reply").is_none());
    let events = read_events(&dir.path().join(SESSIONS_DIR).join(format!("{id}.events.jsonl"))).unwrap();
    assert_eq!(events.len(), 2, "only the session start and greeting are logged");
    let (_, profile) = call(&app, "GET", &format!("/v1/sessions/{id}/profile"), None).await;
    assert_eq!(profile["turn_index"], 1);
}
