//! Core of the crossflow harness.
//!
//! Everything in this crate is pure computation over `alloc` types: no files,
//! no sockets, no clocks. IO, the concrete backends and the command line live
//! in the `crossflow` crate, which plugs into the traits defined here
//! ([`backend::Completer`], [`embed::Embedder`], [`rag::FallbackProvider`],
//! [`agents::Clock`]).

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod agents;
pub mod backend;
pub mod corpus;
pub mod embed;
pub mod metrics;
pub mod rag;
pub mod store;
pub mod text;

pub use agents::{
    build_flow_presets, build_observation, run_agent, run_flow, AgentFailure, AgentMessage, AgentSpec, Clock,
    ContextPolicy, Directive, FailureReason, FlowConfig, FlowRunRecord, FlowStatus, Knowledge, ModelSettings,
    NullClock, QuestionItem, RetrievalTrace, Step,
};
pub use backend::{
    whitespace_token_count, BackendError, BackendErrorKind, Completer, CompletionRequest, CompletionResult, RequestTag,
};
pub use corpus::{chunk_document, Chunk, ChunkConfig, ConfigError, Document};
pub use embed::{cosine, hash_embed, DimensionMismatch, EmbedError, Embedder, Embedding, HashEmbedder};
pub use metrics::{
    aggregate, cosine_answer_similarity, rouge1, throughput, FlowAggregate, MetricRecord, MetricsError, Rouge1Score,
};
pub use rag::{
    assemble_prompt, classify_relevance, retrieve_context, ContextBundle, FallbackError, FallbackProvider, Library,
    RagSettings, RelevanceLabel, Thresholds,
};
pub use store::{RetrievalHit, VectorStore};
pub use text::tokenize;
