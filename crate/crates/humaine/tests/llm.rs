//! The live client against a throwaway HTTP server on localhost.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use humaine::llm::{GatewayError, LiveClient, LlmMode, LlmSettings};
use humaine_core::gateway::CompletionRequest;

/// Reads one HTTP request and returns its body.
fn read_request(stream: &mut TcpStream) -> String {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if line == "\r\n" || line.is_empty() {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    String::from_utf8(body).unwrap()
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    let msg = format!(
        "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(msg.as_bytes()).unwrap();
}

/// Serves `handler(request_number, body)` for every connection.
fn stub(handler: impl Fn(usize, &str) -> (&'static str, String) + Send + 'static) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/complete", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&hits);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let body = read_request(&mut stream);
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let (status, reply) = handler(n, &body);
            respond(&mut stream, status, &reply);
        }
    });
    (url, hits)
}

fn settings(url: &str) -> LlmSettings {
    LlmSettings { mode: LlmMode::Live, url: Some(url.to_string()), backoff_ms: 10, ..LlmSettings::default() }
}

fn request(prompt: &str, timeout_ms: u64) -> CompletionRequest {
    CompletionRequest::new(prompt, 64, 0.2, "stub", timeout_ms).unwrap()
}

#[test]
fn echo_stub_returns_prompt_verbatim() {
    let (url, hits) = stub(|_, body| {
        let v: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(v["max_length"], 64);
        assert_eq!(v["model"], "stub");
        let reply = serde_json::json!({ "text": v["prompt"], "usage": { "prompt_tokens": 3, "completion_tokens": 3 } });
        ("200 OK", reply.to_string())
    });
    let client = LiveClient::new(&settings(&url)).unwrap();
    let prompt = "  Explain budgets,\nplease.  ";
    let c = client.complete(&request(prompt, 5_000)).unwrap();
    assert_eq!(c.text, prompt);
    assert_eq!(c.attempts, 1);
    assert_eq!(c.usage.completion_tokens, 3);
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn two_server_errors_then_success() {
    let (url, hits) = stub(|n, _| {
        if n < 2 {
            ("500 Internal Server Error", "{}".to_string())
        } else {
            ("200 OK", r#"{"text":"finally","usage":{"prompt_tokens":1,"completion_tokens":1}}"#.to_string())
        }
    });
    let client = LiveClient::new(&settings(&url)).unwrap();
    let c = client.complete(&request("hi", 5_000)).unwrap();
    assert_eq!(c.text, "finally");
    assert_eq!(c.attempts, 3);
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn persistent_server_error_reports_status() {
    let (url, hits) = stub(|_, _| ("503 Service Unavailable", "{}".to_string()));
    let client = LiveClient::new(&settings(&url)).unwrap();
    match client.complete(&request("hi", 5_000)) {
        Err(GatewayError::Provider { status, attempts }) => {
            assert_eq!(status, 503);
            assert_eq!(attempts, 3);
        }
        other => panic!("expected a provider error, got {other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, hits) = stub(|_, _| ("401 Unauthorized", "{}".to_string()));
    let client = LiveClient::new(&settings(&url)).unwrap();
    assert!(matches!(client.complete(&request("hi", 5_000)), Err(GatewayError::Provider { status: 401, attempts: 1 })));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn malformed_payload_is_a_protocol_error() {
    let (url, _) = stub(|_, _| ("200 OK", r#"{"answer":"no text field"}"#.to_string()));
    let client = LiveClient::new(&settings(&url)).unwrap();
    assert!(matches!(client.complete(&request("hi", 5_000)), Err(GatewayError::Protocol(_))));
}

#[test]
fn unreachable_endpoint_times_out_within_budget() {
    // Bind then drop to get a port nothing listens on.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = LiveClient::new(&settings(&format!("http://127.0.0.1:{port}/complete"))).unwrap();
    let started = Instant::now();
    let err = client.complete(&request("hi", 1_000)).unwrap_err();
    assert!(matches!(err, GatewayError::Timeout { attempts, .. } if attempts >= 1), "{err:?}");
    assert!(started.elapsed() < Duration::from_millis(1_500));
}

#[test]
fn slow_endpoint_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/complete", listener.local_addr().unwrap());
    thread::spawn(move || {
        let mut held = Vec::new();
        for s in listener.incoming() {
            held.push(s); // accept and never answer
        }
    });
    let client = LiveClient::new(&settings(&url)).unwrap();
    let started = Instant::now();
    let err = client.complete(&request("hi", 300)).unwrap_err();
    assert!(matches!(err, GatewayError::Timeout { .. }), "{err:?}");
    assert!(started.elapsed() < Duration::from_millis(1_000));
}
