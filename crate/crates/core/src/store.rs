//! In-memory exact cosine index.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::embed::{cosine, DimensionMismatch, Embedding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub chunk_id: String,
    pub score: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    text: String,
    vector: Embedding,
}

/// Brute-force vector store keyed by chunk id.
///
/// Queries take `&self`, so a frozen store can be shared across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    entries: BTreeMap<String, Entry>,
}

impl VectorStore {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Insert or replace the entry for `chunk.chunk_id`.
    pub fn insert(&mut self, chunk: &Chunk, vector: Embedding) -> Result<(), DimensionMismatch> {
        self.insert_entry(chunk.chunk_id.clone(), chunk.text.clone(), vector)
    }

    pub fn insert_entry(&mut self, chunk_id: String, text: String, vector: Embedding) -> Result<(), DimensionMismatch> {
        if vector.dim() != self.dim {
            return Err(DimensionMismatch { expected: self.dim, actual: vector.dim() });
        }
        self.entries.insert(chunk_id, Entry { text, vector });
        Ok(())
    }

    pub fn contains(&self, chunk_id: &str) -> bool {
        self.entries.contains_key(chunk_id)
    }

    /// `(chunk_id, text, vector)` in ascending chunk id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &Embedding)> {
        self.entries.iter().map(|(id, e)| (id.as_str(), e.text.as_str(), &e.vector))
    }

    /// The `min(k, len)` best entries by cosine score, ties broken by chunk id.
    pub fn top_k(&self, query: &Embedding, k: usize) -> Result<Vec<RetrievalHit>, DimensionMismatch> {
        if query.dim() != self.dim {
            return Err(DimensionMismatch { expected: self.dim, actual: query.dim() });
        }
        let mut scored: Vec<(&String, &Entry, f64)> = self
            .entries
            .iter()
            .map(|(id, entry)| cosine(query, &entry.vector).map(|s| (id, entry, s)))
            .collect::<Result<_, _>>()?;
        let order = |a: &(&String, &Entry, f64), b: &(&String, &Entry, f64)| -> Ordering {
            b.2.total_cmp(&a.2).then_with(|| a.0.cmp(b.0))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(scored
            .into_iter()
            .map(|(id, entry, score)| RetrievalHit { chunk_id: id.clone(), score, text: entry.text.clone() })
            .collect())
    }
}
