//! OpenAI-compatible HTTP backend and embedder.
//!
//! `POST <base_url>/v1/chat/completions` and `POST <base_url>/v1/embeddings`,
//! bearer-authenticated. Calls are bounded by a timeout, retried with
//! exponential backoff on retryable failures, and limited to `max_inflight`
//! concurrent requests.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use crossflow_core::{
    whitespace_token_count, BackendError, BackendErrorKind, Completer, CompletionRequest, CompletionResult, EmbedError,
    Embedder, Embedding,
};
use serde::Deserialize;
use serde_json::json;

pub const API_KEY_ENV: &str = "CROSSFLOW_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpSettings {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
    pub backoff: Duration,
    pub max_inflight: usize,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            api_key: None,
            timeout: Duration::from_secs(60),
            retries: 2,
            backoff: Duration::from_millis(500),
            max_inflight: 4,
        }
    }
}

/// Counting semaphore for in-flight requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug)]
struct Transport {
    client: reqwest::blocking::Client,
    settings: HttpSettings,
    gate: Gate,
}

impl Transport {
    fn new(settings: HttpSettings) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|e| BackendError::new(BackendErrorKind::Transport, e.to_string()))?;
        Ok(Self { client, gate: Gate::new(settings.max_inflight), settings })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.settings.base_url.trim_end_matches('/'), path)
    }

    fn post_once(&self, path: &str, body: &serde_json::Value) -> Result<String, BackendError> {
        let _permit = self.gate.acquire();
        let mut req = self.client.post(self.url(path)).json(body);
        if let Some(key) = &self.settings.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(classify_reqwest)?;
        let status = resp.status();
        let text = resp.text().map_err(classify_reqwest)?;
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(BackendError::new(BackendErrorKind::Status(status.as_u16()), snippet));
        }
        Ok(text)
    }

    /// At most `1 + retries` attempts; only retryable errors are retried.
    fn post(&self, path: &str, body: &serde_json::Value) -> Result<String, BackendError> {
        let mut attempt = 0u32;
        loop {
            match self.post_once(path, body) {
                Ok(text) => return Ok(text),
                Err(e) if e.retryable && attempt < self.settings.retries => {
                    let wait = self.settings.backoff * 2u32.saturating_pow(attempt);
                    log::warn!("{path} attempt {} failed ({e}); retrying in {wait:?}", attempt + 1);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn classify_reqwest(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::new(BackendErrorKind::Timeout, e.to_string())
    } else if e.is_decode() {
        BackendError::new(BackendErrorKind::Malformed, e.to_string())
    } else {
        BackendError::new(BackendErrorKind::Transport, e.to_string())
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

#[derive(Debug)]
pub struct HttpBackend {
    transport: Transport,
}

impl HttpBackend {
    pub fn new(settings: HttpSettings) -> Result<Self, BackendError> {
        Ok(Self { transport: Transport::new(settings)? })
    }

    pub fn settings(&self) -> &HttpSettings {
        &self.transport.settings
    }
}

/// Turn a chat-completions body into a result, falling back to whitespace
/// counts (flagged as estimated) when usage is not reported.
fn parse_chat(body: &str, prompt: &str, elapsed: Duration) -> Result<CompletionResult, BackendError> {
    let resp: ChatResponse =
        serde_json::from_str(body).map_err(|e| BackendError::new(BackendErrorKind::Malformed, e.to_string()))?;
    let text = resp.choices.into_iter().next().and_then(|c| c.message.content).unwrap_or_default();
    if text.trim().is_empty() {
        return Err(BackendError::new(BackendErrorKind::EmptyResponse, "model returned no content"));
    }
    let usage = resp.usage.as_ref();
    let reported = usage.and_then(|u| u.completion_tokens);
    Ok(CompletionResult {
        prompt_tokens: usage.and_then(|u| u.prompt_tokens).unwrap_or_else(|| whitespace_token_count(prompt)),
        completion_tokens: reported.unwrap_or_else(|| whitespace_token_count(&text)),
        tokens_estimated: reported.is_none(),
        text,
        elapsed: elapsed.max(Duration::from_nanos(1)),
    })
}

impl Completer for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        req.validate()?;
        let body = json!({
            "model": req.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
            "stream": false,
        });
        let start = Instant::now();
        let text = self.transport.post("/v1/chat/completions", &body)?;
        parse_chat(&text, &req.prompt, start.elapsed())
    }
}

#[derive(Debug, Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

/// Remote embedding model; vectors are L2-normalized on arrival.
#[derive(Debug)]
pub struct HttpEmbedder {
    transport: Transport,
    model_id: String,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(settings: HttpSettings, model_id: impl Into<String>, dim: usize) -> Result<Self, BackendError> {
        Ok(Self { transport: Transport::new(settings)?, model_id: model_id.into(), dim })
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        if crossflow_core::tokenize(text).is_empty() {
            return Ok(Embedding::zeros(self.dim));
        }
        let body = json!({"model": self.model_id, "input": text});
        let raw = self.transport.post("/v1/embeddings", &body).map_err(|e| EmbedError::Provider(e.to_string()))?;
        let resp: EmbeddingResponse =
            serde_json::from_str(&raw).map_err(|e| EmbedError::Provider(format!("malformed response: {e}")))?;
        let values = resp
            .data
            .into_iter()
            .next()
            .ok_or_else(|| EmbedError::Provider("response holds no embedding".into()))?
            .embedding;
        let v = Embedding::new(values);
        if v.dim() != self.dim {
            return Err(crossflow_core::DimensionMismatch { expected: self.dim, actual: v.dim() }.into());
        }
        if !v.is_finite() {
            return Err(EmbedError::Provider("non-finite embedding".into()));
        }
        Ok(v.normalized())
    }
}
