//! Documents and token-window chunking.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::text::tokenize;

/// Invalid tunable, reported before any work is done.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("chunk_size must be positive")]
    ZeroChunkSize,
    #[error("chunk_overlap ({overlap}) must be smaller than chunk_size ({size})")]
    OverlapTooLarge { size: usize, overlap: usize },
    #[error("relevance thresholds must satisfy -1 <= tau_lo < tau_hi <= 1 (got tau_lo={lo}, tau_hi={hi})")]
    Thresholds { hi: f64, lo: f64 },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub domain: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, domain: impl Into<String>, text: impl Into<String>) -> Self {
        Self { doc_id: doc_id.into(), domain: domain.into(), text: text.into() }
    }
}

/// A contiguous token window `[start, end)` of one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub token_span: (usize, usize),
    /// Tokens of the window joined by single spaces.
    pub text: String,
}

impl Chunk {
    pub fn span(&self) -> Range<usize> {
        self.token_span.0..self.token_span.1
    }
}

/// Window size and overlap, both in tokens. Always satisfies `overlap < size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkConfig {
    size: usize,
    overlap: usize,
}

impl ChunkConfig {
    pub const DEFAULT_SIZE: usize = 512;
    pub const DEFAULT_OVERLAP: usize = 64;

    pub fn new(size: usize, overlap: usize) -> Result<Self, ConfigError> {
        if size == 0 {
            return Err(ConfigError::ZeroChunkSize);
        }
        if overlap >= size {
            return Err(ConfigError::OverlapTooLarge { size, overlap });
        }
        Ok(Self { size, overlap })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn stride(&self) -> usize {
        self.size - self.overlap
    }

    /// Window spans over a sequence of `n_tokens` tokens.
    pub fn spans(&self, n_tokens: usize) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        if n_tokens == 0 {
            return spans;
        }
        let mut start = 0;
        loop {
            let end = (start + self.size).min(n_tokens);
            spans.push(start..end);
            if end == n_tokens {
                break;
            }
            start += self.stride();
        }
        spans
    }
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self { size: Self::DEFAULT_SIZE, overlap: Self::DEFAULT_OVERLAP }
    }
}

/// Slice a document into overlapping windows starting at multiples of the stride.
///
/// Every window but the last holds exactly `size` tokens. A tail already
/// covered by the previous window does not produce an extra chunk.
pub fn chunk_document(doc: &Document, config: ChunkConfig) -> Vec<Chunk> {
    let tokens = tokenize(&doc.text);
    config
        .spans(tokens.len())
        .into_iter()
        .enumerate()
        .map(|(index, span)| Chunk {
            chunk_id: format!("{}#{}", doc.doc_id, index),
            doc_id: doc.doc_id.clone(),
            token_span: (span.start, span.end),
            text: tokens[span].join(" "),
        })
        .collect()
}
