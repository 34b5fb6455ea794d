//! Dense vectors, cosine similarity and the feature-hashing embedder.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::text::tokenize;

/// A fixed-length real vector. Produced embeddings are unit-norm, or all
/// zero when there was nothing to embed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|x| x * x).sum())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Scale to unit L2 norm. A zero vector stays zero.
    pub fn normalized(mut self) -> Self {
        let norm = self.norm();
        if norm > 0.0 {
            for x in &mut self.0 {
                *x /= norm;
            }
        }
        self
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("dimension mismatch: expected {expected}, got {actual}")]
pub struct DimensionMismatch {
    pub expected: usize,
    pub actual: usize,
}

/// `a·b / (‖a‖‖b‖)`, or 0 when either vector has zero norm.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, DimensionMismatch> {
    if a.dim() != b.dim() {
        return Err(DimensionMismatch { expected: a.dim(), actual: b.dim() });
    }
    let mut dot = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (x, y) in a.values().iter().zip(b.values()) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (libm::sqrt(aa) * libm::sqrt(bb)))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes of `token`.
pub fn fnv1a64(token: &str) -> u64 {
    token.bytes().fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Signed feature hashing over [`tokenize`] tokens, L2-normalized.
///
/// Each token adds ±1 at `hash % dim`, the sign taken from bit 63 of the
/// hash. No tokens gives the zero vector; so does the (rare) case where
/// colliding tokens cancel exactly.
pub fn hash_embed(text: &str, dim: usize) -> Embedding {
    assert!(dim >= 2, "hash_embed needs dim >= 2");
    let mut values = vec![0.0f64; dim];
    for token in tokenize(text) {
        let h = fnv1a64(&token);
        let index = (h % dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        values[index] += sign;
    }
    Embedding(values).normalized()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error("embedding provider failed: {0}")]
    Provider(String),
}

/// Anything that turns text into an [`Embedding`] of a fixed dimension.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, EmbedError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    /// Panics if `dim < 2`.
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "hash embedder needs dim >= 2");
        Self { dim }
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, EmbedError> {
        Ok(hash_embed(text, self.dim))
    }
}
