//! Exercises the HTTP clients against an in-process stub server.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use valor_core::llm::{protocol_reply, BackendError, HttpBackend, LlmBackend, LlmRequest};
use valor_core::ontology::Taxonomy;
use valor_core::retrieval::{
    cosine, EmbeddingProvider, HashEmbedder, RemoteEmbedder, RemoteTopicClassifier, RetrievalError, TopicClassifier,
};

const DIM: usize = 16;
const TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
struct Seen {
    method: String,
    path: String,
    headers: HashMap<String, String>,
    body: Value,
}

/// Knobs that make the stub misbehave.
#[derive(Default, Clone)]
struct Faults {
    wrong_dimension: bool,
    short_logits: bool,
    llm_status: Option<u16>,
    garbage_llm_body: bool,
}

struct Stub {
    base: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

fn domain_order() -> Vec<String> {
    Taxonomy::default_wvs().domains().iter().map(|d| d.name.clone()).collect()
}

fn read_request(stream: &mut TcpStream) -> Option<Seen> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    if reader.read_line(&mut line).ok()? == 0 {
        return None;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut headers = HashMap::new();
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        }
    }
    let len: usize = headers.get("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    let body = if body.is_empty() { Value::Null } else { serde_json::from_slice(&body).unwrap_or(Value::Null) };
    Some(Seen { method, path, headers, body })
}

fn respond(stream: &mut TcpStream, status: u16, body: &str) {
    let reply = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(reply.as_bytes());
}

fn route(req: &Seen, faults: &Faults) -> (u16, String) {
    let hash = HashEmbedder::new(DIM);
    match (req.method.as_str(), req.path.as_str()) {
        ("GET", "/info") => (
            200,
            json!({
                "embed_model": "stub-embed",
                "embed_dimension": DIM,
                "topic_model": "stub-topics",
                "domain_order": domain_order(),
            })
            .to_string(),
        ),
        ("POST", "/embed") => {
            let texts: Vec<String> = serde_json::from_value(req.body["texts"].clone()).unwrap_or_default();
            let dim = if faults.wrong_dimension { DIM + 1 } else { DIM };
            let vectors: Vec<Vec<f32>> = texts.iter().map(|t| HashEmbedder::new(dim).embed_one(t)).collect();
            (200, json!({"vectors": vectors, "dimension": dim, "model_id": "stub-embed"}).to_string())
        }
        ("POST", "/topics") => {
            let text = req.body["text"].as_str().unwrap_or_default();
            let q = hash.embed_one(text);
            let mut logits: Vec<f64> = domain_order().iter().map(|d| cosine(&q, &hash.embed_one(d))).collect();
            if faults.short_logits {
                logits.pop();
            }
            (
                200,
                json!({"logits": logits, "domain_order": domain_order(), "model_id": "stub-topics"}).to_string(),
            )
        }
        ("POST", "/v1/complete") => {
            if let Some(status) = faults.llm_status {
                return (status, "{\"error\":\"overloaded\"}".into());
            }
            if faults.garbage_llm_body {
                return (200, "{\"unexpected\": true}".into());
            }
            let prompt = req.body["prompt"].as_str().unwrap_or_default();
            let text = protocol_reply(prompt);
            (
                200,
                json!({"text": text, "input_tokens": 11, "output_tokens": 7}).to_string(),
            )
        }
        _ => (404, "{}".into()),
    }
}

fn start(faults: Faults) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let log = log.clone();
            let faults = faults.clone();
            thread::spawn(move || {
                if let Some(req) = read_request(&mut stream) {
                    let (status, body) = route(&req, &faults);
                    log.lock().unwrap().push(req);
                    respond(&mut stream, status, &body);
                }
            });
        }
    });
    Stub { base, seen }
}

#[test]
fn embedder_matches_info_and_is_deterministic() {
    let stub = start(Faults::default());
    let e = RemoteEmbedder::connect(&stub.base, TIMEOUT).unwrap();
    assert_eq!(e.identity(), "stub-embed");
    assert_eq!(e.dimension(), DIM);
    let v = e.embed_batch(&["trust in courts", "family", "trust in courts"]).unwrap();
    assert_eq!(v.len(), 3);
    assert!(v.iter().all(|row| row.len() == DIM));
    assert_eq!(v[0], v[2]);
    assert!((cosine(&v[0], &v[0]) - 1.0).abs() < 1e-6);
    assert!(e.embed_batch(&[]).unwrap().is_empty());
    let posts: Vec<Seen> = stub.seen.lock().unwrap().iter().filter(|s| s.path == "/embed").cloned().collect();
    assert_eq!(posts.len(), 1);
}

#[test]
fn embedder_rejects_dimension_drift() {
    let stub = start(Faults {
        wrong_dimension: true,
        ..Faults::default()
    });
    let e = RemoteEmbedder::connect(&stub.base, TIMEOUT).unwrap();
    let err = e.embed("x").unwrap_err();
    assert!(matches!(err, RetrievalError::DimensionMismatch { expected: DIM, .. }), "{err}");
}

#[test]
fn topic_classifier_returns_one_logit_per_domain() {
    let stub = start(Faults::default());
    let c = RemoteTopicClassifier::connect(&stub.base, TIMEOUT).unwrap();
    assert_eq!(c.domains().len(), 12);
    assert_eq!(c.domains(), domain_order());
    let l = c.logits("Do you trust the police?").unwrap();
    assert_eq!(l.len(), 12);
    assert!(l.iter().all(|x| x.is_finite()));
}

#[test]
fn topic_classifier_rejects_short_logits() {
    let stub = start(Faults {
        short_logits: true,
        ..Faults::default()
    });
    let c = RemoteTopicClassifier::connect(&stub.base, TIMEOUT).unwrap();
    assert!(matches!(c.logits("q"), Err(RetrievalError::Classifier(_))));
}

#[test]
fn unreachable_server_is_a_backend_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    assert!(matches!(
        RemoteEmbedder::connect(&base, Duration::from_millis(500)),
        Err(RetrievalError::Backend(_))
    ));
}

#[test]
fn http_backend_speaks_the_completion_protocol() {
    let stub = start(Faults::default());
    std::env::set_var("STUB_LLM_TOKEN", "secret-123");
    let b = HttpBackend::new(format!("{}/v1/complete", stub.base), "stub-model", Some("STUB_LLM_TOKEN"), TIMEOUT)
        .unwrap();
    assert_eq!(b.identity(), "http:stub-model");
    let reply = b.complete(&LlmRequest::new("Reply with JSON only.", 64)).unwrap();
    assert_eq!(reply.text, protocol_reply("Reply with JSON only."));
    assert_eq!((reply.input_tokens, reply.output_tokens), (11, 7));

    let seen = stub.seen.lock().unwrap();
    let req = seen.iter().find(|s| s.path == "/v1/complete").unwrap();
    assert_eq!(req.headers.get("authorization").map(String::as_str), Some("Bearer secret-123"));
    assert_eq!(req.body["model"], "stub-model");
    assert_eq!(req.body["temperature"], 0.0);
    assert_eq!(req.body["max_tokens"], 64);
}

#[test]
fn http_backend_without_token_sends_no_authorization() {
    let stub = start(Faults::default());
    let b = HttpBackend::new(format!("{}/v1/complete", stub.base), "m", None, TIMEOUT).unwrap();
    b.complete(&LlmRequest::new("hi", 8)).unwrap();
    let seen = stub.seen.lock().unwrap();
    assert!(!seen[0].headers.contains_key("authorization"));
}

#[test]
fn http_backend_reports_missing_credentials() {
    let err = HttpBackend::new("http://127.0.0.1:9/v1/complete", "m", Some("VALOR_TEST_UNSET_VARIABLE"), TIMEOUT)
        .err()
        .unwrap();
    assert!(matches!(err, BackendError::MissingCredential(ref v) if v == "VALOR_TEST_UNSET_VARIABLE"));
}

#[test]
fn http_backend_surfaces_status_and_decode_errors() {
    let stub = start(Faults {
        llm_status: Some(503),
        ..Faults::default()
    });
    let b = HttpBackend::new(format!("{}/v1/complete", stub.base), "m", None, TIMEOUT).unwrap();
    match b.complete(&LlmRequest::new("hi", 8)) {
        Err(BackendError::Status { status, body }) => {
            assert_eq!(status, 503);
            assert!(body.contains("overloaded"));
        }
        other => panic!("unexpected {other:?}"),
    }

    let stub = start(Faults {
        garbage_llm_body: true,
        ..Faults::default()
    });
    let b = HttpBackend::new(format!("{}/v1/complete", stub.base), "m", None, TIMEOUT).unwrap();
    assert!(matches!(b.complete(&LlmRequest::new("hi", 8)), Err(BackendError::Decode(_))));
}
