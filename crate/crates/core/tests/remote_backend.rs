use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use booktree_core::backend::{Backend, BackendConfig, BackendError, BackendKind, CompletionRequest, RemoteBackend};
use booktree_core::default_tokenizer;
use parking_lot::Mutex;
use serde_json::{json, Value};

struct Seen {
    headers: String,
    body: Value,
}

/// Answers one connection per scripted response, recording each request.
fn serve(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = std::thread::spawn(move || {
        for (status, reply) in script {
            let (mut stream, _) = listener.accept().unwrap();
            let mut raw = Vec::new();
            let mut buf = [0u8; 8192];
            let (head, body) = loop {
                let n = stream.read(&mut buf).unwrap();
                raw.extend_from_slice(&buf[..n]);
                let text = String::from_utf8_lossy(&raw).into_owned();
                if let Some(end) = text.find("\r\n\r\n") {
                    let head = text[..end].to_ascii_lowercase();
                    let len: usize = head
                        .lines()
                        .find_map(|l| l.strip_prefix("content-length:"))
                        .map(|v| v.trim().parse().unwrap())
                        .unwrap_or(0);
                    if raw.len() >= end + 4 + len {
                        break (head, text[end + 4..end + 4 + len].to_owned());
                    }
                }
                if n == 0 {
                    panic!("connection closed mid-request");
                }
            };
            log.lock().push(Seen {
                headers: head,
                body: serde_json::from_str(&body).unwrap_or(Value::Null),
            });
            let out = format!(
                "HTTP/1.1 {status} Status\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                reply.len()
            );
            stream.write_all(out.as_bytes()).unwrap();
        }
    });
    (url, seen, handle)
}

fn config(endpoint: String) -> BackendConfig {
    BackendConfig {
        kind: BackendKind::Remote,
        endpoint,
        backoff_secs: 0.05,
        timeout_secs: 5.0,
        auth_env: "BOOKTREE_TEST_REMOTE_KEY".into(),
        ..BackendConfig::default()
    }
}

fn request() -> CompletionRequest {
    CompletionRequest {
        prompt: "Some text.\n\n====\nInput.\nTL;DR:".into(),
        max_tokens: 4,
        temperature: 0.3,
        sample_seed: 42,
        stop: None,
    }
}

#[test]
fn retries_server_errors_then_succeeds() {
    std::env::set_var("BOOKTREE_TEST_REMOTE_KEY", "tok-123");
    let ok = json!({ "choices": [{ "text": "  one two three four five six  " }] }).to_string();
    let (url, seen, handle) = serve(vec![(500, "{}".into()), (502, "{}".into()), (200, ok)]);
    let backend = RemoteBackend::new(config(url), default_tokenizer()).unwrap();
    let start = Instant::now();
    let text = backend.complete(&request()).unwrap();
    handle.join().unwrap();

    // truncated to max_tokens
    assert_eq!(text, "one two three four");
    assert_eq!(backend.attempts(), 3);
    // backoff 0.05 s then 0.1 s
    assert!(start.elapsed().as_secs_f64() >= 0.15);

    let seen = seen.lock();
    assert_eq!(seen.len(), 3);
    let body = &seen[2].body;
    assert_eq!(body["prompt"], request().prompt);
    assert_eq!(body["max_tokens"], 4);
    assert_eq!(body["temperature"], 0.3);
    assert_eq!(body["seed"], 42);
    assert!(seen[0].headers.contains("authorization: bearer tok-123"), "{}", seen[0].headers);
}

#[test]
fn gives_up_after_the_retry_budget() {
    let (url, seen, handle) = serve(vec![(503, "{}".into()); 3]);
    let cfg = BackendConfig {
        retries: 2,
        ..config(url)
    };
    let backend = RemoteBackend::new(cfg, default_tokenizer()).unwrap();
    let err = backend.complete(&request()).unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, BackendError::Unavailable { attempts: 3, .. }), "{err:?}");
    assert_eq!(seen.lock().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen, handle) = serve(vec![(401, r#"{"error":"bad key"}"#.into())]);
    let backend = RemoteBackend::new(config(url), default_tokenizer()).unwrap();
    let err = backend.complete(&request()).unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, BackendError::Configuration(_)), "{err:?}");
    assert_eq!(seen.lock().len(), 1);
}

#[test]
fn malformed_response_is_reported() {
    let (url, _, handle) = serve(vec![(200, r#"{"output":"no choices"}"#.into())]);
    let cfg = BackendConfig {
        retries: 0,
        ..config(url)
    };
    let backend = RemoteBackend::new(cfg, default_tokenizer()).unwrap();
    let err = backend.complete(&request()).unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, BackendError::BadResponse(_) | BackendError::Unavailable { .. }), "{err:?}");
}

#[test]
fn custom_field_mapping_and_extra_body() {
    let (url, seen, handle) = serve(vec![(200, json!({ "result": { "text": "fine" } }).to_string())]);
    let mut cfg = config(url);
    cfg.fields.prompt_field = "input".into();
    cfg.fields.seed_field = String::new();
    cfg.fields.text_path = "result.text".into();
    cfg.extra_body.insert("model".into(), json!("small"));
    let backend = RemoteBackend::new(cfg, default_tokenizer()).unwrap();
    assert_eq!(backend.complete(&request()).unwrap(), "fine");
    handle.join().unwrap();
    let body = &seen.lock()[0].body;
    assert_eq!(body["input"], request().prompt);
    assert_eq!(body["model"], "small");
    assert!(body.get("seed").is_none());
}
