mod common;

use std::time::Duration;

use serde_json::{json, Value};

use common::{MockServer, Reply};
use ragmark::embed::{EmbedError, Embedder, RemoteEmbedConfig, RemoteEmbedder};
use ragmark::generate::{GenError, GenerationClient, GenerationRequest, RemoteGenerator};
use ragmark::http::{EndpointConfig, HttpError};
use ragmark::qagen::{QuestionGenClient, RemoteQuestionGenerator};

const DIM: usize = 4;

fn embed_reply(req: &common::Request) -> Reply {
    let texts = req.body["texts"].as_array().cloned().unwrap_or_default();
    let vectors: Vec<Value> = texts
        .iter()
        .map(|t| {
            let len = t.as_str().unwrap_or_default().len() as f64;
            json!([1.0, len, 0.0, 0.5])
        })
        .collect();
    Reply::json(json!({ "vectors": vectors, "dim": DIM, "model": "mock-embed" }))
}

fn texts(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("text {i}")).collect()
}

#[test]
fn embed_batches_by_configured_size() {
    let server = MockServer::start(|_, req| embed_reply(req));
    let embedder = RemoteEmbedder::<f64>::connect(RemoteEmbedConfig::new(&server.url)).unwrap();
    assert_eq!(embedder.dim(), DIM);
    assert_eq!(embedder.name(), "mock-embed");
    let probes = server.hits();
    let out = embedder.embed_batch(&texts(130)).unwrap();
    assert_eq!(out.len(), 130);
    assert_eq!(server.hits() - probes, 3);
    let mut sizes: Vec<usize> = server.requests()[probes..]
        .iter()
        .map(|r| r.body["texts"].as_array().unwrap().len())
        .collect();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![2, 64, 64]);
    // Output order follows input order.
    assert_eq!(out[129].as_slice()[1], "text 129".len() as f64);
    assert!(server.requests().iter().all(|r| r.path == "/embed"));
}

#[test]
fn embed_rejects_wrong_vector_count() {
    let server = MockServer::start(|n, req| {
        if n == 0 {
            embed_reply(req)
        } else {
            Reply::json(json!({ "vectors": [[1.0, 0.0, 0.0, 0.0]], "dim": DIM, "model": "mock-embed" }))
        }
    });
    let embedder = RemoteEmbedder::<f64>::connect(RemoteEmbedConfig::new(&server.url)).unwrap();
    assert!(matches!(
        embedder.embed_batch(&texts(3)),
        Err(EmbedError::CountMismatch { sent: 3, received: 1 })
    ));
}

#[test]
fn embed_detects_dimension_change() {
    let server = MockServer::start(|n, req| {
        if n == 0 {
            embed_reply(req)
        } else {
            Reply::json(json!({ "vectors": [[1.0, 0.0]], "dim": 2, "model": "mock-embed" }))
        }
    });
    let embedder = RemoteEmbedder::<f32>::connect(RemoteEmbedConfig::new(&server.url)).unwrap();
    assert!(matches!(
        embedder.embed_batch(&texts(1)),
        Err(EmbedError::EmbedderChanged { expected: 4, got: 2 })
    ));
}

fn endpoint(url: &str, retries: u32) -> EndpointConfig {
    EndpointConfig {
        retries,
        ..EndpointConfig::new(url)
    }
}

#[test]
fn transient_503_is_retried() {
    let server = MockServer::start(|n, req| {
        if n == 0 {
            Reply::status(503)
        } else {
            Reply::json(json!({ "text": req.body["prompt"] }))
        }
    });
    let generator = RemoteGenerator::new(endpoint(&server.url, 1)).unwrap();
    let text = generator.generate(&GenerationRequest::greedy("hello")).unwrap();
    assert_eq!(text, "hello");
    assert_eq!(server.hits(), 2);
    let stats = generator.stats();
    assert_eq!(stats.calls, 1);
    assert_eq!(stats.failures, 0);
}

#[test]
fn exhausted_retries_surface_the_status() {
    let server = MockServer::start(|_, _| Reply::status(503));
    let generator = RemoteGenerator::new(endpoint(&server.url, 2)).unwrap();
    let err = generator.generate(&GenerationRequest::greedy("hello")).unwrap_err();
    assert!(matches!(err, GenError::Http(HttpError::Status { status: 503, .. })));
    assert_eq!(server.hits(), 3);
    assert_eq!(generator.stats().failures, 1);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(|_, _| Reply::status(400));
    let generator = RemoteGenerator::new(endpoint(&server.url, 3)).unwrap();
    assert!(generator.generate(&GenerationRequest::greedy("x")).is_err());
    assert_eq!(server.hits(), 1);
}

#[test]
fn slow_responses_time_out() {
    let server = MockServer::start(|_, _| Reply::json(json!({ "text": "late" })).delayed(Duration::from_millis(500)));
    let config = EndpointConfig {
        timeout_ms: 50,
        retries: 0,
        ..EndpointConfig::new(&server.url)
    };
    let generator = RemoteGenerator::new(config).unwrap();
    let err = generator.generate(&GenerationRequest::greedy("x")).unwrap_err();
    assert!(matches!(err, GenError::Http(HttpError::Timeout { .. })), "{err:?}");
}

#[test]
fn malformed_bodies_are_reported() {
    let server = MockServer::start(|_, _| Reply::json(json!({ "unexpected": true })));
    let generator = RemoteGenerator::new(endpoint(&server.url, 0)).unwrap();
    let err = generator.generate(&GenerationRequest::greedy("x")).unwrap_err();
    assert!(matches!(err, GenError::Http(HttpError::Malformed { .. })), "{err:?}");
}

#[test]
fn echo_endpoint_returns_the_prompt_and_wire_fields() {
    let server = MockServer::start(|_, req| Reply::json(json!({ "text": req.body["prompt"] })));
    let generator = RemoteGenerator::new(endpoint(&server.url, 0)).unwrap();
    let req = GenerationRequest {
        stop_sequences: vec!["\n\n".into()],
        ..GenerationRequest::greedy("Question: why?\nAnswer:")
    };
    assert_eq!(generator.generate(&req).unwrap(), "Question: why?\nAnswer:");
    let sent = &server.requests()[0];
    assert_eq!(sent.path, "/generate");
    assert_eq!(sent.body["temperature"], json!(0.0));
    assert_eq!(sent.body["stop"], json!(["\n\n"]));
    assert!(sent.body["max_new_tokens"].as_u64().unwrap() > 0);
}

#[test]
fn question_endpoint_roundtrip() {
    let server = MockServer::start(|_, req| {
        let k = req.body["k"].as_u64().unwrap();
        let questions: Vec<String> = (0..k).map(|i| format!("Question {i}?")).collect();
        Reply::json(json!({ "questions": questions }))
    });
    let qg = RemoteQuestionGenerator::new(endpoint(&server.url, 0)).unwrap();
    let qs = qg.generate("Some passage.", 3).unwrap();
    assert_eq!(qs, vec!["Question 0?", "Question 1?", "Question 2?"]);
    assert_eq!(server.requests()[0].path, "/generate_questions");
    assert_eq!(server.requests()[0].body["text"], json!("Some passage."));
}

#[test]
fn timeouts_below_the_floor_are_config_errors() {
    let config = EndpointConfig {
        timeout_ms: 5,
        ..EndpointConfig::new("http://127.0.0.1:1")
    };
    assert!(matches!(RemoteGenerator::new(config), Err(GenError::Http(HttpError::Config(_)))));
    assert!(matches!(
        RemoteEmbedder::<f64>::connect(RemoteEmbedConfig {
            endpoint: EndpointConfig {
                timeout_ms: 0,
                ..EndpointConfig::new("http://127.0.0.1:1")
            },
            batch_size: 8,
            max_inflight: 1,
        }),
        Err(EmbedError::Http(HttpError::Config(_)))
    ));
}
