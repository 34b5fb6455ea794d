//! Answer-quality and throughput metrics.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embed::{cosine, EmbedError, Embedder};
use crate::text::tokenize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("elapsed time must be positive")]
    NonPositiveElapsed,
    #[error("cannot aggregate an empty record set")]
    Empty,
}

/// Unigram overlap scores. `f1` is the harmonic mean, 0 when `P + R = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rouge1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Rouge1Score {
    pub fn from_counts(overlap: usize, candidate_len: usize, reference_len: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(overlap, candidate_len);
        let recall = ratio(overlap, reference_len);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, f1 }
    }
}

fn counts(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// Number of shared unigrams with clipped counts:
/// `Σ_w min(count_cand(w), count_ref(w))`.
pub fn clipped_overlap(candidate: &[String], reference: &[String]) -> usize {
    let cand = counts(candidate);
    let refs = counts(reference);
    cand.iter().map(|(w, &c)| refs.get(w).map_or(0, |&r| c.min(r))).sum()
}

/// ROUGE-1 of `candidate` against `reference`, over [`tokenize`] tokens.
///
/// Precision divides the overlap by the candidate length, recall by the
/// reference length; an empty side gives 0 for its ratio.
pub fn rouge1(candidate: &str, reference: &str) -> Rouge1Score {
    let cand = tokenize(candidate);
    let refs = tokenize(reference);
    Rouge1Score::from_counts(clipped_overlap(&cand, &refs), cand.len(), refs.len())
}

/// Cosine between the embeddings of the two answers.
pub fn cosine_answer_similarity(candidate: &str, reference: &str, embedder: &dyn Embedder) -> Result<f64, EmbedError> {
    let a = embedder.embed(candidate)?;
    let b = embedder.embed(reference)?;
    Ok(cosine(&a, &b)?)
}

/// Completion tokens per second of `elapsed`.
pub fn throughput(completion_tokens: u64, elapsed: Duration) -> Result<f64, MetricsError> {
    if elapsed.is_zero() {
        return Err(MetricsError::NonPositiveElapsed);
    }
    Ok(completion_tokens as f64 / elapsed.as_secs_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub flow_id: String,
    pub question_id: String,
    pub rouge1: Rouge1Score,
    pub cosine: f64,
    /// Over the end-to-end time for the question.
    pub tokens_per_second: f64,
    /// Over backend time only.
    pub backend_tokens_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowAggregate {
    pub flow_id: String,
    pub records: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub cosine: f64,
    pub tokens_per_second: f64,
    pub backend_tokens_per_second: f64,
}

/// Order-independent mean: values are sorted before summing.
fn mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values.into_iter().sum::<f64>() / n
}

/// Unweighted per-flow means. Flows without records do not appear.
pub fn aggregate(records: &[MetricRecord]) -> Result<BTreeMap<String, FlowAggregate>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut by_flow: BTreeMap<&str, Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        by_flow.entry(r.flow_id.as_str()).or_default().push(r);
    }
    Ok(by_flow
        .into_iter()
        .map(|(flow, rs)| {
            let col = |f: fn(&MetricRecord) -> f64| mean(rs.iter().map(|r| f(r)).collect());
            let agg = FlowAggregate {
                flow_id: flow.into(),
                records: rs.len(),
                precision: col(|r| r.rouge1.precision),
                recall: col(|r| r.rouge1.recall),
                f1: col(|r| r.rouge1.f1),
                cosine: col(|r| r.cosine),
                tokens_per_second: col(|r| r.tokens_per_second),
                backend_tokens_per_second: col(|r| r.backend_tokens_per_second),
            };
            (String::from(flow), agg)
        })
        .collect())
}
