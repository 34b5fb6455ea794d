//! Fallback knowledge providers for non-Correct retrievals.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use crossflow_core::{FallbackError, FallbackProvider};
use serde::Deserialize;

use crate::error::{Error, Result};

/// Logs the request and returns nothing.
#[derive(Debug, Default)]
pub struct NoopFallback;

impl FallbackProvider for NoopFallback {
    fn search(&self, query: &str) -> std::result::Result<Vec<String>, FallbackError> {
        log::info!("fallback requested for {query:?}; no provider configured");
        Ok(Vec::new())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureLine {
    query: String,
    snippets: Vec<String>,
}

/// Canned snippets keyed by exact query; `"*"` matches anything else.
///
/// Fixture lines: `{"query": "bandgap", "snippets": ["web: ..."]}`.
#[derive(Debug, Default)]
pub struct FixtureFallback {
    answers: HashMap<String, Vec<String>>,
    calls: AtomicUsize,
}

impl FixtureFallback {
    pub fn new(answers: impl IntoIterator<Item = (String, Vec<String>)>) -> Self {
        Self { answers: answers.into_iter().collect(), calls: AtomicUsize::new(0) }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut answers = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: FixtureLine = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            answers.insert(l.query, l.snippets);
        }
        Ok(Self::new(answers))
    }

    /// Number of `search` calls so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl FallbackProvider for FixtureFallback {
    fn search(&self, query: &str) -> std::result::Result<Vec<String>, FallbackError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.answers.get(query.trim()).or_else(|| self.answers.get("*")).cloned().unwrap_or_default())
    }
}
