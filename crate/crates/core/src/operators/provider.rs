use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ProviderConfig, TemplateId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub template: TemplateId,
    pub prompt: String,
    pub temperature: f64,
    /// Per-request seed. Providers that support seeding forward it.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub total_tokens: Option<u64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("empty completion")]
    Empty,
    #[error("credential variable {0} is not set")]
    Credential(String),
    #[error("replay: {0}")]
    Replay(String),
}

pub trait Provider: Send + Sync {
    fn complete(&self, req: &PromptRequest, cfg: &ProviderConfig) -> Result<Completion, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn complete(&self, req: &PromptRequest, cfg: &ProviderConfig) -> Result<Completion, ProviderError> {
        (**self).complete(req, cfg)
    }
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn complete(&self, req: &PromptRequest, cfg: &ProviderConfig) -> Result<Completion, ProviderError> {
        (**self).complete(req, cfg)
    }
}

/// OpenAI-compatible chat completions over HTTPS. The credential is read from
/// the configured environment variable on every call and never logged.
#[derive(Debug, Clone)]
pub struct OpenAiProvider {
    timeout: Duration,
}

impl Default for OpenAiProvider {
    fn default() -> Self {
        OpenAiProvider {
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    total_tokens: Option<u64>,
}

impl OpenAiProvider {
    pub fn new(timeout: Duration) -> Self {
        OpenAiProvider { timeout }
    }
}

impl Provider for OpenAiProvider {
    fn complete(&self, req: &PromptRequest, cfg: &ProviderConfig) -> Result<Completion, ProviderError> {
        let key = std::env::var(&cfg.credential_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| ProviderError::Credential(cfg.credential_env.clone()))?;
        let url = format!("{}/chat/completions", cfg.endpoint.trim_end_matches('/'));
        let body = json!({
            "model": cfg.model,
            "temperature": req.temperature,
            "max_tokens": cfg.max_tokens,
            // The API takes a signed 64-bit seed.
            "seed": (req.seed >> 1) as i64,
            "messages": [{"role": "user", "content": req.prompt}],
        });
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut resp = agent
            .post(&url)
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(&body)
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ProviderError::Status {
                status,
                body: body.chars().take(500).collect(),
            });
        }
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        if text.trim().is_empty() {
            return Err(ProviderError::Empty);
        }
        Ok(Completion {
            text,
            total_tokens: parsed.usage.and_then(|u| u.total_tokens),
        })
    }
}

/// One recorded provider exchange, stored as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub prompt_sha256: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Answers from a transcript written by [`RecordingProvider`]. A request with
/// no recorded answer is an error, never a live call.
#[derive(Debug)]
pub struct ReplayProvider {
    entries: HashMap<(String, u64), TranscriptEntry>,
}

impl ReplayProvider {
    pub fn open(path: &Path) -> Result<Self, ProviderError> {
        let file = File::open(path)
            .map_err(|e| ProviderError::Replay(format!("{}: {e}", path.display())))?;
        let mut entries = HashMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| ProviderError::Replay(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line)
                .map_err(|e| ProviderError::Replay(format!("line {}: {e}", n + 1)))?;
            entries.insert((entry.prompt_sha256.clone(), entry.seed), entry);
        }
        Ok(ReplayProvider { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Provider for ReplayProvider {
    fn complete(&self, req: &PromptRequest, _cfg: &ProviderConfig) -> Result<Completion, ProviderError> {
        let key = (prompt_digest(&req.prompt), req.seed);
        let entry = self.entries.get(&key).ok_or_else(|| {
            ProviderError::Replay(format!("no recorded answer for prompt {} seed {}", key.0, key.1))
        })?;
        match (&entry.text, &entry.error) {
            (Some(text), _) => Ok(Completion {
                text: text.clone(),
                total_tokens: entry.total_tokens,
            }),
            (None, Some(err)) => Err(ProviderError::Transport(err.clone())),
            (None, None) => Err(ProviderError::Empty),
        }
    }
}

/// Forwards to `inner` and appends every exchange to a transcript file.
pub struct RecordingProvider<P> {
    inner: P,
    path: PathBuf,
    out: Mutex<File>,
}

impl<P: Provider> RecordingProvider<P> {
    pub fn create(inner: P, path: &Path) -> std::io::Result<Self> {
        let out = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RecordingProvider {
            inner,
            path: path.to_owned(),
            out: Mutex::new(out),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl<P: Provider> Provider for RecordingProvider<P> {
    fn complete(&self, req: &PromptRequest, cfg: &ProviderConfig) -> Result<Completion, ProviderError> {
        let result = self.inner.complete(req, cfg);
        let mut entry = TranscriptEntry {
            prompt_sha256: prompt_digest(&req.prompt),
            seed: req.seed,
            text: None,
            total_tokens: None,
            error: None,
        };
        match &result {
            Ok(c) => {
                entry.text = Some(c.text.clone());
                entry.total_tokens = c.total_tokens;
            }
            Err(ProviderError::Empty) => {}
            Err(e) => entry.error = Some(e.to_string()),
        }
        let line = serde_json::to_string(&entry).expect("transcript entry serializes");
        let mut out = self.out.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = writeln!(out, "{line}") {
            log::warn!("transcript write failed: {e}");
        }
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::SeededMockProvider;

    fn req(prompt: &str, seed: u64) -> PromptRequest {
        PromptRequest {
            template: TemplateId::Mutation,
            prompt: prompt.into(),
            temperature: 0.9,
            seed,
        }
    }

    #[test]
    fn record_then_replay_matches() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let cfg = ProviderConfig::default();
        let prompt = crate::operators::build_mutation_prompt(&crate::seeds::builtin()[0]).unwrap();
        let rec = RecordingProvider::create(SeededMockProvider::new(3, 0.5), &path).unwrap();
        let live: Vec<_> = (0..20).map(|s| rec.complete(&req(&prompt, s), &cfg)).collect();
        drop(rec);
        let replay = ReplayProvider::open(&path).unwrap();
        for (s, expected) in live.iter().enumerate() {
            let got = replay.complete(&req(&prompt, s as u64), &cfg);
            match (expected, got) {
                (Ok(a), Ok(b)) => assert_eq!(a, &b),
                (Err(_), Err(_)) => {}
                (a, b) => panic!("mismatch at {s}: {a:?} vs {b:?}"),
            }
        }
        assert!(matches!(
            replay.complete(&req(&prompt, 999), &cfg),
            Err(ProviderError::Replay(_))
        ));
    }

    #[test]
    fn missing_credential_is_reported_by_name() {
        let cfg = ProviderConfig {
            credential_env: "SHADERBREED_TEST_UNSET_KEY".into(),
            ..ProviderConfig::default()
        };
        let err = OpenAiProvider::default().complete(&req("x", 0), &cfg).unwrap_err();
        assert_eq!(err, ProviderError::Credential("SHADERBREED_TEST_UNSET_KEY".into()));
    }

    #[test]
    fn corrupt_transcript_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "{\"prompt_sha256\":\"a\",\"seed\":1}\nnot json\n").unwrap();
        let err = ReplayProvider::open(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
