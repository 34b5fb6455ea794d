//! HTTP backend behaviour against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crossflow::http::{HttpBackend, HttpEmbedder, HttpSettings};
use crossflow_core::{BackendErrorKind, Completer, CompletionRequest, Embedder};

enum Reply {
    Json(u16, String),
    Stall(Duration),
}

struct Server {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<String>>>,
}

fn read_request(stream: &mut TcpStream) -> String {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0usize;
    let mut headers = String::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
        headers.push_str(&line);
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).unwrap();
    headers + &String::from_utf8(body).unwrap()
}

/// Serve `script` in order; the last reply repeats.
fn serve(script: Vec<Reply>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let (h, b) = (hits.clone(), bodies.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let n = h.fetch_add(1, Ordering::SeqCst);
            b.lock().unwrap().push(read_request(&mut stream));
            match &script[n.min(script.len() - 1)] {
                Reply::Json(status, body) => {
                    let resp = format!(
                        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    let _ = stream.write_all(resp.as_bytes());
                }
                Reply::Stall(d) => {
                    let d = *d;
                    thread::spawn(move || {
                        thread::sleep(d);
                        drop(stream);
                    });
                }
            }
        }
    });
    Server { url, hits, bodies }
}

fn settings(url: &str) -> HttpSettings {
    HttpSettings {
        base_url: url.to_string(),
        api_key: Some("secret-key".into()),
        timeout: Duration::from_millis(400),
        retries: 2,
        backoff: Duration::from_millis(10),
        max_inflight: 2,
    }
}

fn chat(content: &str, usage: Option<(u64, u64)>) -> String {
    let usage =
        usage.map_or(String::new(), |(p, c)| format!(r#","usage":{{"prompt_tokens":{p},"completion_tokens":{c}}}"#));
    format!(r#"{{"choices":[{{"message":{{"role":"assistant","content":"{content}"}}}}]{usage}}}"#)
}

fn request() -> CompletionRequest {
    CompletionRequest::new("what is hBN?", "test-model")
}

#[test]
fn reported_usage_passes_through() {
    let s = serve(vec![Reply::Json(200, chat("white graphene", Some((17, 5))))]);
    let r = HttpBackend::new(settings(&s.url)).unwrap().complete(&request()).unwrap();
    assert_eq!(r.text, "white graphene");
    assert_eq!((r.prompt_tokens, r.completion_tokens), (17, 5));
    assert!(!r.tokens_estimated);
    assert!(r.elapsed > Duration::ZERO);
    let sent = s.bodies.lock().unwrap()[0].clone();
    assert!(sent.contains("POST /v1/chat/completions"), "{sent}");
    assert!(sent.to_ascii_lowercase().contains("authorization: bearer secret-key"));
    assert!(sent.contains(r#""model":"test-model""#));
}

#[test]
fn missing_usage_is_estimated() {
    let s = serve(vec![Reply::Json(200, chat("one two three", None))]);
    let r = HttpBackend::new(settings(&s.url)).unwrap().complete(&request()).unwrap();
    assert_eq!(r.completion_tokens, 3);
    assert!(r.tokens_estimated);
}

#[test]
fn server_errors_are_retried_until_success() {
    let s = serve(vec![
        Reply::Json(500, "{}".into()),
        Reply::Json(503, "{}".into()),
        Reply::Json(200, chat("ok", Some((1, 1)))),
    ]);
    let r = HttpBackend::new(settings(&s.url)).unwrap().complete(&request()).unwrap();
    assert_eq!(r.text, "ok");
    assert_eq!(s.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_are_bounded() {
    let s = serve(vec![Reply::Json(500, "{}".into())]);
    let e = HttpBackend::new(settings(&s.url)).unwrap().complete(&request()).unwrap_err();
    assert_eq!(e.kind, BackendErrorKind::Status(500));
    assert_eq!(s.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let s = serve(vec![Reply::Json(400, r#"{"error":"bad"}"#.into())]);
    let e = HttpBackend::new(settings(&s.url)).unwrap().complete(&request()).unwrap_err();
    assert_eq!(e.kind, BackendErrorKind::Status(400));
    assert!(!e.retryable);
    assert_eq!(s.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn timeouts_are_retryable() {
    let s = serve(vec![Reply::Stall(Duration::from_secs(2))]);
    let mut cfg = settings(&s.url);
    cfg.retries = 1;
    let e = HttpBackend::new(cfg).unwrap().complete(&request()).unwrap_err();
    assert_eq!(e.kind, BackendErrorKind::Timeout);
    assert!(e.retryable);
    assert_eq!(s.hits.load(Ordering::SeqCst), 2);
}

#[test]
fn malformed_body_is_reported() {
    let s = serve(vec![Reply::Json(200, r#"{"choices":[]}"#.into())]);
    let e = HttpBackend::new(settings(&s.url)).unwrap().complete(&request()).unwrap_err();
    assert!(matches!(e.kind, BackendErrorKind::Malformed | BackendErrorKind::EmptyResponse), "{e:?}");
}

#[test]
fn embeddings_are_normalized_and_dimension_checked() {
    let s = serve(vec![Reply::Json(200, r#"{"data":[{"embedding":[3.0,4.0]}]}"#.into())]);
    let e = HttpEmbedder::new(settings(&s.url), "emb", 2).unwrap();
    let v = e.embed("hello").unwrap();
    assert!((v.values()[0] - 0.6).abs() < 1e-12 && (v.values()[1] - 0.8).abs() < 1e-12);
    assert!(s.bodies.lock().unwrap()[0].contains("POST /v1/embeddings"));

    let wrong = HttpEmbedder::new(settings(&s.url), "emb", 3).unwrap();
    assert!(wrong.embed("hello").is_err());
}
