//! Retrieval with relevance gating and prompt assembly.
//!
//! A query is embedded, matched against a [`VectorStore`], and the best
//! cosine score is bucketed as Correct / Ambiguous / Incorrect. Anything
//! short of Correct triggers the optional [`FallbackProvider`], whose
//! snippets are appended after the retrieved chunks.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::ConfigError;
use crate::embed::Embedder;
use crate::store::{RetrievalHit, VectorStore};

/// Ordered `Incorrect < Ambiguous < Correct`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelevanceLabel {
    Incorrect,
    Ambiguous,
    Correct,
}

impl RelevanceLabel {
    pub fn needs_fallback(self) -> bool {
        self != RelevanceLabel::Correct
    }
}

/// Score cut-offs; `-1 <= lo < hi <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    hi: f64,
    lo: f64,
}

impl Thresholds {
    pub const DEFAULT_HI: f64 = 0.75;
    pub const DEFAULT_LO: f64 = 0.40;

    pub fn new(hi: f64, lo: f64) -> Result<Self, ConfigError> {
        let ok = lo.is_finite() && hi.is_finite() && -1.0 <= lo && lo < hi && hi <= 1.0;
        if !ok {
            return Err(ConfigError::Thresholds { hi, lo });
        }
        Ok(Self { hi, lo })
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    /// `score >= hi` is Correct, `lo <= score < hi` Ambiguous, else Incorrect.
    pub fn classify(&self, score: f64) -> RelevanceLabel {
        if score >= self.hi {
            RelevanceLabel::Correct
        } else if score >= self.lo {
            RelevanceLabel::Ambiguous
        } else {
            RelevanceLabel::Incorrect
        }
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { hi: Self::DEFAULT_HI, lo: Self::DEFAULT_LO }
    }
}

pub fn classify_relevance(best_score: f64, tau_hi: f64, tau_lo: f64) -> Result<RelevanceLabel, ConfigError> {
    Thresholds::new(tau_hi, tau_lo).map(|t| t.classify(best_score))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("fallback provider failed: {0}")]
pub struct FallbackError(pub String);

/// Supplementary knowledge source consulted when retrieval is not Correct.
pub trait FallbackProvider: Send + Sync {
    fn search(&self, query: &str) -> Result<Vec<String>, FallbackError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub query: String,
    pub hits: Vec<RetrievalHit>,
    pub label: RelevanceLabel,
    pub fallback_snippets: Vec<String>,
    /// Non-fatal problems (embedding or fallback failures).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ContextBundle {
    pub fn empty(query: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            hits: Vec::new(),
            label: RelevanceLabel::Incorrect,
            fallback_snippets: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn best_score(&self) -> f64 {
        self.hits.first().map_or(-1.0, |h| h.score)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RagSettings {
    pub k: usize,
    pub thresholds: Thresholds,
}

impl RagSettings {
    pub const DEFAULT_K: usize = 5;
}

impl Default for RagSettings {
    fn default() -> Self {
        Self { k: Self::DEFAULT_K, thresholds: Thresholds::default() }
    }
}

/// Embed, search, classify, and consult the fallback when needed.
///
/// Never fails: an empty store classifies as Incorrect, and embedding or
/// fallback errors are recorded as warnings on the bundle.
pub fn retrieve_context(
    query: &str,
    store: &VectorStore,
    embedder: &dyn Embedder,
    settings: &RagSettings,
    fallback: Option<&dyn FallbackProvider>,
) -> ContextBundle {
    let mut bundle = ContextBundle::empty(query);
    if !store.is_empty() {
        match embedder
            .embed(query)
            .map_err(|e| format!("{e}"))
            .and_then(|q| store.top_k(&q, settings.k).map_err(|e| format!("{e}")))
        {
            Ok(hits) => bundle.hits = hits,
            Err(e) => bundle.warnings.push(format!("retrieval failed: {e}")),
        }
    }
    bundle.label = settings.thresholds.classify(bundle.best_score());
    if bundle.label.needs_fallback() {
        if let Some(provider) = fallback {
            match provider.search(query) {
                Ok(snippets) => bundle.fallback_snippets = snippets,
                Err(e) => bundle.warnings.push(format!("{e}")),
            }
        }
    }
    bundle
}

/// Render the model prompt. Every line ends in `\n`; each hit is followed by
/// a `---` separator line and each fallback snippet is one line.
pub fn assemble_prompt(query: &str, bundle: &ContextBundle, system_prompt: &str) -> String {
    let mut out = String::new();
    out.push_str("SYSTEM: ");
    out.push_str(system_prompt);
    out.push_str("\nCONTEXT:\n");
    for hit in &bundle.hits {
        out.push_str(&hit.text);
        out.push_str("\n---\n");
    }
    for snippet in &bundle.fallback_snippets {
        out.push_str(snippet);
        out.push('\n');
    }
    out.push_str("QUESTION: ");
    out.push_str(query);
    out.push('\n');
    out
}

/// Per-corpus stores plus the shared embedder, settings and fallback.
#[derive(Clone)]
pub struct Library {
    stores: BTreeMap<String, VectorStore>,
    embedder: Arc<dyn Embedder>,
    settings: RagSettings,
    fallback: Option<Arc<dyn FallbackProvider>>,
}

impl Library {
    pub fn new(embedder: Arc<dyn Embedder>, settings: RagSettings) -> Self {
        Self { stores: BTreeMap::new(), embedder, settings, fallback: None }
    }

    pub fn with_fallback(mut self, fallback: Arc<dyn FallbackProvider>) -> Self {
        self.fallback = Some(fallback);
        self
    }

    pub fn add_store(&mut self, corpus: impl Into<String>, store: VectorStore) {
        self.stores.insert(corpus.into(), store);
    }

    pub fn store(&self, corpus: &str) -> Option<&VectorStore> {
        self.stores.get(corpus)
    }

    pub fn corpora(&self) -> impl Iterator<Item = &str> {
        self.stores.keys().map(String::as_str)
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn settings(&self) -> &RagSettings {
        &self.settings
    }

    /// `None` when `corpus` has no store.
    pub fn retrieve(&self, corpus: &str, query: &str) -> Option<ContextBundle> {
        let store = self.stores.get(corpus)?;
        Some(retrieve_context(query, store, self.embedder.as_ref(), &self.settings, self.fallback.as_deref()))
    }
}

impl core::fmt::Debug for Library {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Library")
            .field("corpora", &self.stores.keys().collect::<Vec<_>>())
            .field("settings", &self.settings)
            .field("fallback", &self.fallback.is_some())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{chunk_document, ChunkConfig, Document};
    use crate::embed::{hash_embed, HashEmbedder};
    use alloc::string::ToString;
    use alloc::vec;
    use core::sync::atomic::{AtomicUsize, Ordering};
    use proptest::prelude::*;

    struct Fixed(Vec<String>);
    impl FallbackProvider for Fixed {
        fn search(&self, _q: &str) -> Result<Vec<String>, FallbackError> {
            Ok(self.0.clone())
        }
    }

    struct Broken;
    impl FallbackProvider for Broken {
        fn search(&self, _q: &str) -> Result<Vec<String>, FallbackError> {
            Err(FallbackError("offline".to_string()))
        }
    }

    #[derive(Default)]
    struct Counting(AtomicUsize);
    impl FallbackProvider for Counting {
        fn search(&self, q: &str) -> Result<Vec<String>, FallbackError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(vec![format!("web: {q}")])
        }
    }

    fn indexed(texts: &[&str]) -> VectorStore {
        let mut store = VectorStore::new(256);
        for (i, t) in texts.iter().enumerate() {
            let doc = Document::new(format!("doc{i}.txt"), "test", *t);
            for c in chunk_document(&doc, ChunkConfig::default()) {
                store.insert(&c, hash_embed(&c.text, 256)).unwrap();
            }
        }
        store
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_relevance(0.80, 0.75, 0.40), Ok(RelevanceLabel::Correct));
        assert_eq!(classify_relevance(0.75, 0.75, 0.40), Ok(RelevanceLabel::Correct));
        assert_eq!(classify_relevance(0.40, 0.75, 0.40), Ok(RelevanceLabel::Ambiguous));
        assert_eq!(classify_relevance(0.10, 0.75, 0.40), Ok(RelevanceLabel::Incorrect));
        assert!(classify_relevance(0.5, 0.4, 0.75).is_err());
        assert!(classify_relevance(0.5, 0.4, 0.4).is_err());
        assert!(classify_relevance(0.5, 1.5, 0.4).is_err());
        assert!(classify_relevance(0.5, 0.5, -1.5).is_err());
        assert!(classify_relevance(0.5, f64::NAN, 0.1).is_err());
    }

    #[test]
    fn label_order() {
        assert!(RelevanceLabel::Correct > RelevanceLabel::Ambiguous);
        assert!(RelevanceLabel::Ambiguous > RelevanceLabel::Incorrect);
    }

    #[test]
    fn verbatim_query_is_correct() {
        let store = indexed(&["boron nitride has a wide bandgap", "lithium ion electrolytes"]);
        let b = retrieve_context(
            "lithium ion electrolytes",
            &store,
            &HashEmbedder::default(),
            &RagSettings::default(),
            None,
        );
        assert_eq!(b.label, RelevanceLabel::Correct);
        assert_eq!(b.hits[0].chunk_id, "doc1.txt#0");
        assert!((b.hits[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_store_is_incorrect() {
        let store = VectorStore::new(256);
        let emb = HashEmbedder::default();
        let b = retrieve_context("anything", &store, &emb, &RagSettings::default(), None);
        assert_eq!(b.label, RelevanceLabel::Incorrect);
        assert!(b.hits.is_empty() && b.fallback_snippets.is_empty());

        let fb = Fixed(vec!["web: X".to_string()]);
        let b = retrieve_context("anything", &store, &emb, &RagSettings::default(), Some(&fb));
        assert_eq!(b.fallback_snippets, ["web: X"]);
    }

    #[test]
    fn fallback_failure_is_a_warning() {
        let store = VectorStore::new(256);
        let b = retrieve_context("q", &store, &HashEmbedder::default(), &RagSettings::default(), Some(&Broken));
        assert!(b.fallback_snippets.is_empty());
        assert_eq!(b.warnings.len(), 1);
        assert!(b.warnings[0].contains("offline"));
    }

    #[test]
    fn fallback_skipped_when_correct() {
        let store = indexed(&["exact match text"]);
        let counter = Counting::default();
        let b = retrieve_context(
            "exact match text",
            &store,
            &HashEmbedder::default(),
            &RagSettings::default(),
            Some(&counter),
        );
        assert_eq!(b.label, RelevanceLabel::Correct);
        assert_eq!(counter.0.load(Ordering::SeqCst), 0);
        let b = retrieve_context(
            "unrelated words",
            &store,
            &HashEmbedder::default(),
            &RagSettings::default(),
            Some(&counter),
        );
        assert_ne!(b.label, RelevanceLabel::Correct);
        assert_eq!(counter.0.load(Ordering::SeqCst), 1);
        assert_eq!(b.fallback_snippets, ["web: unrelated words"]);
    }

    #[test]
    fn prompt_template_exact() {
        let empty = ContextBundle::empty("What is h-BN?");
        assert_eq!(
            assemble_prompt("What is h-BN?", &empty, "You are helpful."),
            "SYSTEM: You are helpful.\nCONTEXT:\nQUESTION: What is h-BN?\n"
        );
        let mut b = ContextBundle::empty("q");
        b.hits = vec![
            RetrievalHit { chunk_id: "a#0".into(), score: 0.9, text: "first hit".into() },
            RetrievalHit { chunk_id: "b#0".into(), score: 0.5, text: "second hit".into() },
        ];
        b.fallback_snippets = vec!["web: one".into(), "web: two".into()];
        let p = assemble_prompt("q", &b, "sys");
        assert_eq!(p, "SYSTEM: sys\nCONTEXT:\nfirst hit\n---\nsecond hit\n---\nweb: one\nweb: two\nQUESTION: q\n");
        assert_eq!(p, assemble_prompt("q", &b, "sys"));
    }

    proptest! {
        #[test]
        fn classification_is_monotone(a in -1.0f64..=1.0, b in -1.0f64..=1.0, lo in -1.0f64..0.9) {
            let hi = (lo + 0.05).min(1.0);
            let t = Thresholds::new(hi, lo).unwrap();
            let (hi_s, lo_s) = if a >= b { (a, b) } else { (b, a) };
            prop_assert!(t.classify(hi_s) >= t.classify(lo_s));
        }

        #[test]
        fn prompt_contains_each_piece_once(
            query in "[A-Z]{12}",
            hits in proptest::collection::btree_set("[A-Z]{10}", 0..6),
        ) {
            // Lowercase-free sentinels can't collide with the template words.
            let query = format!("Q{query}Q");
            let mut b = ContextBundle::empty(query.clone());
            b.hits = hits.iter().enumerate().map(|(i, t)| RetrievalHit {
                chunk_id: format!("c{i}"), score: 0.0, text: format!("H{t}H"),
            }).collect();
            let p = assemble_prompt(&query, &b, "system");
            prop_assert_eq!(p.matches(query.as_str()).count(), 1);
            for h in &b.hits {
                prop_assert_eq!(p.matches(h.text.as_str()).count(), 1);
            }
        }
    }
}
