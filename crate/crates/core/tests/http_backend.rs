mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use common::{echo_response, StubServer};
use goldsel::backend::{Backend, BackendError, Embedder, HttpBackend, HttpConfig, RetryPolicy, ScoreRequest};
use serde_json::json;

fn config(server: &StubServer) -> HttpConfig {
    HttpConfig {
        base_url: server.base_url.clone(),
        model: "tiny".into(),
        retry: RetryPolicy { attempts: 3, initial_backoff_ms: 5, multiplier: 2.0 },
        timeout_secs: 5,
        ..Default::default()
    }
}

fn prompt_of(seen: &common::Seen) -> String {
    seen.body["prompt"].as_str().unwrap().to_string()
}

#[test]
fn scores_echoed_target_tokens() {
    let server = StubServer::start(|seen| (200, echo_response(&prompt_of(seen), |k| -0.1 * k as f64)));
    let backend = HttpBackend::new(config(&server)).unwrap();
    // tokens: "Q:", " café?", "\nA:", " oui", " merci"
    let span = backend.score_span(&ScoreRequest::new("Q: café?\nA:", " oui merci").unwrap()).unwrap();
    assert_eq!(span.prefix_token_count(), 3);
    assert_eq!(span.token_logprobs(), &[-0.30000000000000004, -0.4]);

    let seen = server.seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/completions");
    assert_eq!(seen[0].body["echo"], json!(true));
    assert_eq!(seen[0].body["max_tokens"], json!(0));
    assert_eq!(seen[0].body["model"], json!("tiny"));
}

#[test]
fn boundary_inside_token_counts_toward_target() {
    let server = StubServer::start(|seen| (200, echo_response(&prompt_of(seen), |k| -(k as f64))));
    let backend = HttpBackend::new(config(&server)).unwrap();
    // "Answer: fo" + "obar baz": token " foobar" straddles the boundary
    let span = backend.score_span(&ScoreRequest::new("Answer: fo", "obar baz").unwrap()).unwrap();
    assert_eq!(span.token_logprobs(), &[-1.0, -2.0]);
}

#[test]
fn retries_server_errors_then_succeeds() {
    let count = Arc::new(AtomicUsize::new(0));
    let c = count.clone();
    let server = StubServer::start(move |seen| {
        if c.fetch_add(1, Ordering::SeqCst) < 2 {
            (503, "{\"error\":\"busy\"}".into())
        } else {
            (200, echo_response(&prompt_of(seen), |_| -0.5))
        }
    });
    let backend = HttpBackend::new(config(&server)).unwrap();
    let span = backend.score_span(&ScoreRequest::new("a", " b").unwrap()).unwrap();
    assert_eq!(span.mean(), -0.5);
    assert_eq!(server.calls(), 3);
}

#[test]
fn gives_up_after_three_attempts() {
    let server = StubServer::start(|_| (500, "oops".into()));
    let backend = HttpBackend::new(config(&server)).unwrap();
    let err = backend.score_span(&ScoreRequest::new("a", " b").unwrap()).unwrap_err();
    assert!(matches!(err, BackendError::Unavailable { attempts: 3, .. }), "{err}");
    assert_eq!(server.calls(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = StubServer::start(|_| (404, "{\"error\":\"no such model\"}".into()));
    let backend = HttpBackend::new(config(&server)).unwrap();
    let err = backend.score_span(&ScoreRequest::new("a", " b").unwrap()).unwrap_err();
    assert!(matches!(err, BackendError::Rejected(_)), "{err}");
    assert_eq!(server.calls(), 1);
}

#[test]
fn server_context_error_maps_to_overflow() {
    let server = StubServer::start(|_| {
        (400, "{\"error\":\"This model's maximum context length is 2048 tokens\"}".into())
    });
    let backend = HttpBackend::new(config(&server)).unwrap();
    let err = backend.score_span(&ScoreRequest::new("a", " b").unwrap()).unwrap_err();
    assert!(matches!(err, BackendError::ContextOverflow { tokens: None, budget: 2048 }));
}

#[test]
fn tokenize_endpoint_rejects_before_dispatch() {
    let server = StubServer::start(|seen| match seen.path.as_str() {
        "/tokenize" => (200, json!({"count": 5000}).to_string()),
        _ => (200, echo_response(&prompt_of(seen), |_| -0.5)),
    });
    let backend = HttpBackend::new(HttpConfig { tokenize_path: Some("/tokenize".into()), ..config(&server) }).unwrap();
    let err = backend.score_span(&ScoreRequest::new("a", " b").unwrap()).unwrap_err();
    assert!(matches!(err, BackendError::ContextOverflow { tokens: Some(5000), .. }));
    assert_eq!(server.calls(), 1);
}

#[test]
fn unreachable_backend_is_unavailable() {
    let cfg = HttpConfig {
        base_url: "http://127.0.0.1:1".into(),
        retry: RetryPolicy { attempts: 2, initial_backoff_ms: 1, multiplier: 2.0 },
        ..Default::default()
    };
    let err = HttpBackend::new(cfg).unwrap().score_span(&ScoreRequest::new("a", " b").unwrap()).unwrap_err();
    assert!(matches!(err, BackendError::Unavailable { attempts: 2, .. }));
}

#[test]
fn api_key_from_environment() {
    std::env::set_var("GOLDSEL_HTTP_TEST_KEY", "sekrit");
    let server = StubServer::start(|seen| (200, echo_response(&prompt_of(seen), |_| -0.5)));
    let cfg = HttpConfig { api_key_env: Some("GOLDSEL_HTTP_TEST_KEY".into()), ..config(&server) };
    HttpBackend::new(cfg).unwrap().score_span(&ScoreRequest::new("a", " b").unwrap()).unwrap();
    let seen = server.seen.lock().unwrap();
    assert!(seen[0].headers.iter().any(|(k, v)| k == "authorization" && v == "Bearer sekrit"));
    assert!(!seen[0].body.to_string().contains("sekrit"));
}

#[test]
fn embedding_dimension_drift() {
    let count = Arc::new(AtomicUsize::new(0));
    let c = count.clone();
    let server = StubServer::start(move |_| {
        let dim = if c.fetch_add(1, Ordering::SeqCst) == 0 { 3 } else { 4 };
        (200, json!({"data": [{"embedding": vec![0.5; dim]}]}).to_string())
    });
    let backend = HttpBackend::new(config(&server)).unwrap();
    assert_eq!(backend.embed("first").unwrap().dim(), 3);
    let err = backend.embed("second").unwrap_err();
    assert!(matches!(err, BackendError::DimensionDrift { expected: 3, got: 4 }));
    assert_eq!(server.seen.lock().unwrap()[0].path, "/v1/embeddings");
}

#[test]
fn descriptor_excludes_credentials_and_transport() {
    std::env::set_var("GOLDSEL_HTTP_TEST_KEY2", "k");
    let a = HttpBackend::new(HttpConfig { api_key_env: Some("GOLDSEL_HTTP_TEST_KEY2".into()), ..Default::default() }).unwrap();
    let b = HttpBackend::new(HttpConfig { timeout_secs: 1, ..Default::default() }).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    let c = HttpBackend::new(HttpConfig { model: "other".into(), ..Default::default() }).unwrap();
    assert_ne!(a.fingerprint(), c.fingerprint());
}
