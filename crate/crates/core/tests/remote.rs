//! The HTTP client against an in-process mock model server.

#![allow(clippy::needless_range_loop)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use revex::predictor::wire::{
    decode_batch, encode_batch, InfoResponse, PredictRequest, PredictResponse,
};
use revex::predictor::{predict_target, Echo, Predictor, RemoteClient, RetryPolicy};
use revex::{Dims, Error, VideoTensor};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../protocol/fixtures");

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{FIXTURES}/{name}")).unwrap()
}

type Handler = dyn Fn(usize, &str, &str) -> (u16, String) + Send + Sync;

/// Serves `handler(call_index, path, body)` until the test process exits.
struct MockServer {
    url: String,
    calls: Arc<AtomicUsize>,
    batches: Arc<Mutex<Vec<usize>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<(String, String)> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1)?.to_string();
    let mut len = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        if h == "\r\n" || h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok()?;
    Some((path, String::from_utf8(body).ok()?))
}

impl MockServer {
    fn start(handler: Box<Handler>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let calls = Arc::new(AtomicUsize::new(0));
        let batches = Arc::new(Mutex::new(Vec::new()));
        let (c, b) = (calls.clone(), batches.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let Some((path, body)) = read_request(&mut stream) else {
                    continue;
                };
                if path == "/predict" {
                    if let Ok(req) = serde_json::from_str::<PredictRequest>(&body) {
                        b.lock().unwrap().push(req.shape[0]);
                    }
                }
                let n = c.fetch_add(1, Ordering::SeqCst);
                let (status, text) = handler(n, &path, &body);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        Self {
            url,
            calls,
            batches,
        }
    }
}

fn info(class_count: usize, max_batch: usize) -> String {
    serde_json::to_string(&InfoResponse {
        class_count,
        max_batch,
        normalized: true,
    })
    .unwrap()
}

/// A conforming model: `Echo` semantics over the wire.
fn echo_model(class_count: usize, max_batch: usize) -> Box<Handler> {
    Box::new(move |_, path, body| {
        if path == "/info" {
            return (200, info(class_count, max_batch));
        }
        let req: PredictRequest = match serde_json::from_str(body) {
            Ok(r) => r,
            Err(e) => return (400, format!(r#"{{"error":"{e}"}}"#)),
        };
        let videos = decode_batch(&req).unwrap();
        let rows = Echo { class_count }.predict_batch(&videos).unwrap();
        let resp = PredictResponse {
            confidences: rows.into_iter().map(|r| r.0).collect(),
            normalized: true,
        };
        (200, serde_json::to_string(&resp).unwrap())
    })
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        attempts: 3,
        initial_backoff: Duration::from_millis(5),
        timeout: Duration::from_secs(10),
    }
}

fn video(v: f32) -> VideoTensor {
    VideoTensor::filled(Dims::new(2, 3, 4).unwrap(), 3, v).unwrap()
}

#[test]
fn golden_request_matches_encoder() {
    let d = Dims::new(1, 1, 2).unwrap();
    let a = VideoTensor::new(d, 1, vec![0.0, 1.0]).unwrap();
    let b = VideoTensor::new(d, 1, vec![0.5, 0.25]).unwrap();
    let golden: PredictRequest = serde_json::from_str(&fixture("predict_request.json")).unwrap();
    assert_eq!(encode_batch(&[a.clone(), b.clone()]).unwrap(), golden);
    assert_eq!(decode_batch(&golden).unwrap(), vec![a.clone(), b.clone()]);

    let info: InfoResponse = serde_json::from_str(&fixture("info.json")).unwrap();
    let resp: PredictResponse = serde_json::from_str(&fixture("predict_response.json")).unwrap();
    let echo = Echo {
        class_count: info.class_count,
    }
    .predict_batch(&[a, b])
    .unwrap();
    assert_eq!(
        resp.confidences,
        echo.into_iter().map(|r| r.0).collect::<Vec<_>>()
    );
}

#[test]
fn batches_are_split_to_max_batch_in_order() {
    let srv = MockServer::start(echo_model(3, 2));
    let client = RemoteClient::connect_with(&srv.url, fast_retry()).unwrap();
    assert_eq!(client.class_count(), 3);
    assert_eq!(client.max_batch(), 2);
    let videos: Vec<VideoTensor> = (0..5).map(|i| video(i as f32 / 5.0)).collect();
    let got = predict_target(&client, &videos, 0).unwrap();
    let want: Vec<f32> = videos.iter().map(Echo::confidence).collect();
    assert_eq!(got, want);
    assert_eq!(*srv.batches.lock().unwrap(), vec![2, 2, 1]);
}

#[test]
fn overload_is_retried_with_backoff() {
    let inner = echo_model(2, 8);
    let srv = MockServer::start(Box::new(move |n, path, body| {
        if path == "/predict" && (n == 1 || n == 2) {
            return (503, String::new());
        }
        inner(n, path, body)
    }));
    let client = RemoteClient::connect_with(&srv.url, fast_retry()).unwrap();
    let p = client.predict(&video(0.3)).unwrap();
    assert!((p.get(0) - 0.3).abs() < 1e-6);
    assert_eq!(srv.calls.load(Ordering::SeqCst), 4);
}

#[test]
fn persistent_overload_is_a_transport_error() {
    let srv = MockServer::start(Box::new(|_, path, _| {
        if path == "/info" {
            (200, info(2, 8))
        } else {
            (503, String::new())
        }
    }));
    let client = RemoteClient::connect_with(&srv.url, fast_retry()).unwrap();
    match client.predict(&video(0.3)) {
        Err(Error::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
    assert_eq!(srv.calls.load(Ordering::SeqCst), 4);
}

#[test]
fn unreachable_server_fails_after_three_attempts() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    match RemoteClient::connect_with(&format!("http://127.0.0.1:{port}"), fast_retry()) {
        Err(Error::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
}

fn protocol_error(resp: &'static str) -> Error {
    let srv = MockServer::start(Box::new(move |_, path, _| {
        if path == "/info" {
            (200, info(2, 8))
        } else {
            (200, resp.to_string())
        }
    }));
    let client = RemoteClient::connect_with(&srv.url, fast_retry()).unwrap();
    client.predict_batch(&[video(0.1), video(0.2)]).unwrap_err()
}

#[test]
fn nonconforming_responses_are_protocol_errors() {
    for body in [
        r#"{"confidences":[[0.5,0.5]],"normalized":true}"#,
        r#"{"confidences":[[0.5,0.5],[0.5]],"normalized":true}"#,
        r#"{"confidences":[[0.5,0.5],[1.5,-0.5]],"normalized":true}"#,
        r#"{"confidences":"nope"}"#,
    ] {
        assert!(matches!(protocol_error(body), Error::Protocol(_)), "{body}");
    }
}

#[test]
fn bad_request_carries_the_server_message() {
    let srv = MockServer::start(Box::new(|_, path, _| {
        if path == "/info" {
            (200, info(2, 8))
        } else {
            (400, r#"{"error":"shape mismatch"}"#.into())
        }
    }));
    let client = RemoteClient::connect_with(&srv.url, fast_retry()).unwrap();
    match client.predict(&video(0.1)) {
        Err(Error::Protocol(m)) => assert!(m.contains("shape mismatch"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert_eq!(srv.calls.load(Ordering::SeqCst), 2);
}

#[test]
fn invalid_info_is_rejected() {
    for body in [r#"{"class_count":0,"max_batch":1,"normalized":true}"#, "{}"] {
        let srv = MockServer::start(Box::new(move |_, _, _| (200, body.to_string())));
        assert!(matches!(
            RemoteClient::connect_with(&srv.url, fast_retry()),
            Err(Error::Protocol(_))
        ));
    }
}
