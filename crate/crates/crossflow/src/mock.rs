//! Scripted offline backend.
//!
//! Fixture files are JSON Lines, one entry per line:
//!
//! ```text
//! {"key": "bn_agent|q1", "text": "ANSWER: about 6 eV", "delay_ms": 100}
//! {"key": "ai_agent|q1", "steps": ["RETRIEVE: {{question}}", "ANSWER: {{context}}"]}
//! ```
//!
//! `steps[i]` answers ReAct step `i` (the last one repeats); `text` answers
//! every step. Unknown keys echo `MOCK(<first 8 prompt tokens>)`.
//!
//! Reply text may use placeholders resolved against the prompt:
//! `{{question}}` (first line after `QUESTION: `), `{{context}}` (first
//! retrieved block), and `{{from:<agent_id>}}` (that agent's line in the
//! observed history). `{{name|default}}` supplies a fallback when the
//! placeholder has nothing to resolve to.

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use crossflow_core::{
    whitespace_token_count, BackendError, BackendErrorKind, Completer, CompletionRequest, CompletionResult,
};
use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockEntry {
    pub key: String,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub delay_ms: Option<f64>,
    #[serde(default)]
    pub steps: Option<Vec<String>>,
}

impl MockEntry {
    fn reply(&self, step: usize) -> &str {
        match (&self.steps, &self.text) {
            (Some(steps), _) if !steps.is_empty() => &steps[step.min(steps.len() - 1)],
            (_, Some(text)) => text,
            _ => "",
        }
    }
}

/// Smallest elapsed time a mock call reports.
const MIN_ELAPSED: Duration = Duration::from_micros(1);

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    entries: HashMap<String, MockEntry>,
    per_prompt_token_ms: f64,
    realtime: bool,
}

impl MockBackend {
    pub fn new(entries: impl IntoIterator<Item = MockEntry>) -> Self {
        Self { entries: entries.into_iter().map(|e| (e.key.clone(), e)).collect(), ..Default::default() }
    }

    /// Extra scripted delay for every whitespace token of the prompt.
    pub fn with_prompt_delay(mut self, ms_per_token: f64) -> Self {
        self.per_prompt_token_ms = ms_per_token;
        self
    }

    /// Actually sleep for the scripted delay and report measured time,
    /// instead of reporting the scripted delay directly.
    pub fn realtime(mut self, on: bool) -> Self {
        self.realtime = on;
        self
    }

    pub fn is_realtime(&self) -> bool {
        self.realtime
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entry(&self, key: &str) -> Option<&MockEntry> {
        self.entries.get(key)
    }

    fn delay_for(&self, entry_ms: f64, prompt_tokens: u64) -> Duration {
        let ms = entry_ms + self.per_prompt_token_ms * prompt_tokens as f64;
        Duration::from_micros((ms * 1000.0).round().max(0.0) as u64)
    }
}

/// Parse a fixture file. Errors carry the 1-based line number.
pub fn mock_from_fixture(path: &Path) -> Result<MockBackend> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fixture(&text, path)
}

pub fn parse_fixture(text: &str, path: &Path) -> Result<MockBackend> {
    let mut entries: HashMap<String, MockEntry> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("//") {
            continue;
        }
        let entry: MockEntry = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if entry.text.is_none() && entry.steps.as_ref().is_none_or(|s| s.is_empty()) {
            return Err(Error::parse(path, i + 1, format!("entry {} has neither text nor steps", entry.key)));
        }
        if entry.delay_ms.is_some_and(|d| d.is_nan() || d < 0.0) {
            return Err(Error::parse(path, i + 1, "delay_ms must be >= 0"));
        }
        if entries.contains_key(&entry.key) {
            return Err(Error::parse(path, i + 1, format!("duplicate key {}", entry.key)));
        }
        entries.insert(entry.key.clone(), entry);
    }
    Ok(MockBackend { entries, ..Default::default() })
}

fn question_of(prompt: &str) -> Option<&str> {
    let at = prompt.rfind("QUESTION: ")?;
    let rest = &prompt[at + "QUESTION: ".len()..];
    Some(rest.lines().next().unwrap_or("").trim()).filter(|s| !s.is_empty())
}

fn context_of(prompt: &str) -> Option<&str> {
    let start = prompt.find("\nCONTEXT:\n")? + "\nCONTEXT:\n".len();
    let section = &prompt[start..];
    if section.starts_with("QUESTION: ") {
        return None;
    }
    let section = &section[..section.find("\nQUESTION: ").unwrap_or(section.len())];
    let first = match section.find("\n---") {
        Some(end) => &section[..end],
        None => section.lines().next().unwrap_or(""),
    };
    Some(first.trim()).filter(|s| !s.is_empty())
}

fn history_of<'a>(prompt: &'a str, agent: &str) -> Option<&'a str> {
    let marker = format!("\n[{agent}]: ");
    let at = prompt.find(&marker)?;
    let rest = &prompt[at + marker.len()..];
    Some(rest.lines().next().unwrap_or("").trim()).filter(|s| !s.is_empty())
}

/// Resolve `{{...}}` placeholders in `template` against `prompt`.
pub fn render(template: &str, prompt: &str) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        let Some(close) = rest[open..].find("}}").map(|c| open + c) else { break };
        out.push_str(&rest[..open]);
        let body = &rest[open + 2..close];
        let (name, default) = match body.split_once('|') {
            Some((n, d)) => (n.trim(), Some(d)),
            None => (body.trim(), None),
        };
        let value = match name {
            "question" => question_of(prompt),
            "context" => context_of(prompt),
            _ => match name.strip_prefix("from:") {
                Some(agent) => history_of(prompt, agent.trim()),
                None => None,
            },
        };
        match (value, default) {
            (Some(v), _) => out.push_str(v),
            (None, Some(d)) => out.push_str(d),
            (None, None) => {}
        }
        rest = &rest[close + 2..];
    }
    out.push_str(rest);
    out
}

impl Completer for MockBackend {
    fn complete(&self, req: &CompletionRequest) -> std::result::Result<CompletionResult, BackendError> {
        req.validate()?;
        let prompt_tokens = whitespace_token_count(&req.prompt);
        let entry = req.tag.as_ref().and_then(|t| self.entries.get(&t.key()));
        let (text, entry_delay) = match entry {
            Some(e) => {
                let step = req.tag.as_ref().map_or(0, |t| t.step);
                (render(e.reply(step), &req.prompt), e.delay_ms.unwrap_or(0.0))
            }
            None => {
                let head: Vec<&str> = req.prompt.split_whitespace().take(8).collect();
                (format!("MOCK({})", head.join(" ")), 0.0)
            }
        };
        if text.is_empty() {
            return Err(BackendError::new(BackendErrorKind::EmptyResponse, "scripted reply rendered empty"));
        }
        let delay = self.delay_for(entry_delay, prompt_tokens);
        let elapsed = if self.realtime {
            let start = Instant::now();
            std::thread::sleep(delay);
            start.elapsed()
        } else {
            delay
        };
        Ok(CompletionResult {
            completion_tokens: whitespace_token_count(&text),
            prompt_tokens,
            text,
            elapsed: elapsed.max(MIN_ELAPSED),
            tokens_estimated: false,
        })
    }
}
