#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use shaderbreed_core::audio::{encode_wav_pcm16, PcmClip};
use shaderbreed_core::operators::ProviderSpec;
use shaderbreed_server::api::router;
use shaderbreed_server::config::{AppConfig, BackendChoice};
use shaderbreed_server::session::SessionManager;
use tower::ServiceExt;

pub fn config(dir: &Path, failure_rate: f64) -> AppConfig {
    AppConfig {
        session_dir: dir.to_owned(),
        compile_backend: BackendChoice::Native,
        provider: ProviderSpec::Mock {
            seed: 17,
            failure_rate,
        },
        rng_seed: 17,
        ..AppConfig::default()
    }
}

pub fn app(dir: &Path, failure_rate: f64) -> (Arc<SessionManager>, Router) {
    let m = Arc::new(SessionManager::new(config(dir, failure_rate)));
    (m.clone(), router(m))
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::String(
        String::from_utf8_lossy(&bytes).into_owned(),
    ));
    (status, value)
}

pub async fn call_raw(app: &Router, method: Method, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>, axum::http::HeaderMap) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .body(Body::from(body))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, bytes.to_vec(), headers)
}

/// Parsed server-sent event.
#[derive(Debug, Clone)]
pub struct SseEvent {
    pub event: String,
    pub id: u64,
    pub data: Value,
}

/// Opens the event stream and returns a reader that yields parsed events.
pub async fn open_events(app: &Router, session: &str) -> SseReader {
    let req = Request::builder()
        .uri(format!("/api/sessions/{session}/events"))
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(
        resp.headers().get("content-type").unwrap(),
        "text/event-stream"
    );
    SseReader {
        body: resp.into_body(),
        buf: String::new(),
    }
}

pub struct SseReader {
    body: Body,
    buf: String,
}

impl SseReader {
    pub async fn next(&mut self) -> Option<SseEvent> {
        loop {
            if let Some(end) = self.buf.find("\n\n") {
                let block: String = self.buf.drain(..end + 2).collect();
                let (mut event, mut id, mut data) = (String::new(), 0, String::new());
                for line in block.lines() {
                    if let Some(v) = line.strip_prefix("event: ") {
                        event = v.to_owned();
                    } else if let Some(v) = line.strip_prefix("id: ") {
                        id = v.parse().unwrap();
                    } else if let Some(v) = line.strip_prefix("data: ") {
                        data.push_str(v);
                    }
                }
                if event.is_empty() {
                    continue; // keep-alive comment
                }
                return Some(SseEvent {
                    event,
                    id,
                    data: serde_json::from_str(&data).unwrap(),
                });
            }
            let frame = tokio::time::timeout(Duration::from_secs(60), self.body.frame())
                .await
                .ok()??
                .ok()?;
            if let Ok(bytes) = frame.into_data() {
                self.buf.push_str(&String::from_utf8_lossy(&bytes));
            }
        }
    }

    /// Events up to and including the first one of kind `last`.
    pub async fn until(&mut self, last: &str) -> Vec<SseEvent> {
        let mut out = Vec::new();
        while let Some(ev) = self.next().await {
            let done = ev.event == last;
            out.push(ev);
            if done {
                break;
            }
        }
        out
    }
}

pub fn sine_wav(freq: f64, seconds: f64, sr: u32) -> (PcmClip, Vec<u8>) {
    let n = (seconds * sr as f64) as usize;
    let samples = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin() as f32)
        .collect();
    let clip = PcmClip::new(samples, sr).unwrap();
    let bytes = encode_wav_pcm16(&clip);
    (clip, bytes)
}

pub fn silence_wav(seconds: f64, sr: u32) -> Vec<u8> {
    let clip = PcmClip::new(vec![0.0; (seconds * sr as f64) as usize], sr).unwrap();
    encode_wav_pcm16(&clip)
}

pub fn genome_ids(view: &Value) -> Vec<String> {
    view["genomes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|g| g["id"].as_str().unwrap().to_owned())
        .collect()
}
