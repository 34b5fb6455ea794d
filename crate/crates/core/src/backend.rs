//! The completion interface every agent calls.

use alloc::string::String;
use core::time::Duration;

use serde::{Deserialize, Serialize};

/// Routing metadata for scripted backends. Live backends ignore it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTag {
    pub agent_id: String,
    pub question_id: String,
    /// Zero-based ReAct step within the agent run.
    pub step: usize,
}

impl RequestTag {
    /// `"<agent_id>|<question_id>"`, the key scripted fixtures are indexed by.
    pub fn key(&self) -> String {
        let mut k = String::with_capacity(self.agent_id.len() + self.question_id.len() + 1);
        k.push_str(&self.agent_id);
        k.push('|');
        k.push_str(&self.question_id);
        k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub tag: Option<RequestTag>,
}

impl CompletionRequest {
    pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

    pub fn new(prompt: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            model_id: model_id.into(),
            temperature: 0.0,
            max_output_tokens: Self::DEFAULT_MAX_OUTPUT_TOKENS,
            tag: None,
        }
    }

    pub fn with_tag(mut self, tag: RequestTag) -> Self {
        self.tag = Some(tag);
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::invalid("prompt must be non-empty"));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::invalid("temperature must be >= 0"));
        }
        if self.max_output_tokens == 0 {
            return Err(BackendError::invalid("max_output_tokens must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Wall-clock (or scripted) time spent inside the call; always positive.
    pub elapsed: Duration,
    /// Token counts come from the whitespace rule, not from the provider.
    pub tokens_estimated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendErrorKind {
    Transport,
    Timeout,
    Status(u16),
    Malformed,
    EmptyResponse,
    InvalidRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("{kind:?}: {message}")]
pub struct BackendError {
    pub kind: BackendErrorKind,
    pub message: String,
    pub retryable: bool,
}

impl BackendError {
    pub fn new(kind: BackendErrorKind, message: impl Into<String>) -> Self {
        let retryable = match kind {
            BackendErrorKind::Transport | BackendErrorKind::Timeout => true,
            BackendErrorKind::Status(code) => code == 408 || code == 429 || code >= 500,
            BackendErrorKind::Malformed | BackendErrorKind::EmptyResponse | BackendErrorKind::InvalidRequest => false,
        };
        Self { kind, message: message.into(), retryable }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(BackendErrorKind::InvalidRequest, message)
    }
}

/// Whitespace-separated token count.
pub fn whitespace_token_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// A chat-completion provider. Implementations must tolerate concurrent calls.
pub trait Completer: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError>;

    fn count_tokens(&self, text: &str) -> u64 {
        whitespace_token_count(text)
    }
}

impl<T: Completer + ?Sized> Completer for &T {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        (**self).complete(req)
    }

    fn count_tokens(&self, text: &str) -> u64 {
        (**self).count_tokens(text)
    }
}

impl<T: Completer + ?Sized> Completer for alloc::sync::Arc<T> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        (**self).complete(req)
    }

    fn count_tokens(&self, text: &str) -> u64 {
        (**self).count_tokens(text)
    }
}
