//! LLM client contract plus the replay and live implementations.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const API_KEY_ENV: &str = "CONSOLE_LLM_API_KEY";
pub const BASE_URL_ENV: &str = "CONSOLE_LLM_BASE_URL";
pub const MODEL_ENV: &str = "CONSOLE_LLM_MODEL";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server returned status {0}: {1}")]
    Status(u16, String),
    #[error("no recorded response for prompt (sha256 {0})")]
    NotRecorded(String),
    #[error("missing credentials: {0}")]
    Auth(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl ClientError {
    /// Whether a retry can reasonably succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            ClientError::Timeout | ClientError::Transport(_) => true,
            ClientError::Status(code, _) => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

/// Sends a prompt, returns the completion text.
pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, ClientError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }
}

impl RetryPolicy {
    pub fn no_wait(max_retries: u32) -> Self {
        Self {
            max_retries,
            initial_backoff: Duration::ZERO,
            timeout: Duration::from_secs(60),
        }
    }
}

/// Calls `client` until it succeeds, a permanent error occurs, or the retry
/// budget is spent. The wait doubles after every failed attempt.
pub fn complete_with_retry(
    client: &dyn LlmClient,
    prompt: &str,
    policy: &RetryPolicy,
) -> Result<String, ClientError> {
    let mut backoff = policy.initial_backoff;
    let mut attempt = 0;
    loop {
        match client.complete(prompt) {
            Ok(text) => return Ok(text),
            Err(e) if e.is_transient() && attempt < policy.max_retries => {
                attempt += 1;
                if !backoff.is_zero() {
                    thread::sleep(backoff);
                }
                backoff = backoff.saturating_mul(2);
            }
            Err(e) => return Err(e),
        }
    }
}

pub fn prompt_digest(prompt: &str) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(prompt.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// One recorded exchange in a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub prompt: String,
    pub response: String,
}

/// Serves responses from a recorded transcript, keyed by exact prompt text.
#[derive(Debug, Clone, Default)]
pub struct ReplayClient {
    responses: HashMap<String, String>,
}

impl ReplayClient {
    pub fn new(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        Self {
            responses: entries.into_iter().map(|e| (e.prompt, e.response)).collect(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(Self::new(read_transcript(path)?))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl LlmClient for ReplayClient {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        self.responses
            .get(prompt)
            .cloned()
            .ok_or_else(|| ClientError::NotRecorded(prompt_digest(prompt)))
    }
}

pub fn read_transcript(path: impl AsRef<Path>) -> std::io::Result<Vec<TranscriptEntry>> {
    let f = fs::File::open(path)?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: TranscriptEntry = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("transcript line {}: {e}", i + 1))
        })?;
        entries.push(e);
    }
    Ok(entries)
}

pub fn write_transcript(path: impl AsRef<Path>, entries: &[TranscriptEntry]) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    for e in entries {
        let line = serde_json::to_string(e).map_err(std::io::Error::other)?;
        writeln!(f, "{line}")?;
    }
    f.sync_all()
}

/// Chat-completions client for an OpenAI-compatible endpoint.
pub struct LiveClient {
    agent: ureq::Agent,
    api_key: String,
    base_url: String,
    model: String,
}

impl LiveClient {
    /// Reads credentials from the environment.
    pub fn from_env(timeout: Duration) -> Result<Self, ClientError> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| ClientError::Auth(format!("{API_KEY_ENV} is not set")))?;
        let base_url =
            std::env::var(BASE_URL_ENV).unwrap_or_else(|_| "https://api.openai.com/v1".into());
        let model = std::env::var(MODEL_ENV).unwrap_or_else(|_| "gpt-3.5-turbo".into());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            api_key,
            base_url,
            model,
        })
    }
}

impl LlmClient for LiveClient {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => ClientError::Timeout,
                other => ClientError::Transport(other.to_string()),
            })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(ClientError::Status(status, text));
        }
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ClientError::Malformed(e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ClientError::Malformed("missing choices[0].message.content".into()))
    }
}
