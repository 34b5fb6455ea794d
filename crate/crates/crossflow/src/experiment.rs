//! The ingest → run → evaluate → report pipeline behind the CLI.
//!
//! Output directory layout:
//!
//! ```text
//! <out>/index/<domain>.jsonl   vector index per domain
//! <out>/records.jsonl          one FlowRunRecord per (flow, question)
//! <out>/metrics.jsonl          one MetricRecord per scored record
//! <out>/aggregates.json        per-flow means
//! <out>/report.csv             per-flow table, comma-separated
//! <out>/report.txt             per-flow table, aligned
//! ```

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crossflow_core::{
    aggregate, chunk_document, cosine_answer_similarity, rouge1, run_flow, throughput, Clock, FlowAggregate,
    FlowConfig, FlowRunRecord, Knowledge, Library, MetricRecord, NullClock, QuestionItem, VectorStore,
};

use crate::config::ExperimentConfig;
use crate::corpus::load_corpus;
use crate::error::{Error, Result};
use crate::index::{load_index, save_index};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const AGGREGATES_FILE: &str = "aggregates.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";

/// Wall-clock [`Clock`] anchored at construction.
#[derive(Debug)]
pub struct MonotonicClock(Instant);

impl Default for MonotonicClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    /// Overrides `output_dir`.
    pub out: Option<PathBuf>,
    /// Re-run records that already exist.
    pub force: bool,
    /// Restrict to these flow ids.
    pub flows: Option<Vec<String>>,
}

impl Options {
    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| cfg.output_dir())
    }

    fn wants(&self, flow_id: &str) -> bool {
        self.flows.as_ref().is_none_or(|f| f.iter().any(|x| x == flow_id))
    }
}

pub fn index_path(out: &Path, domain: &str) -> PathBuf {
    out.join("index").join(format!("{domain}.jsonl"))
}

/// Load a question set: JSON Lines of `{question_id, domain, question, expected_answer}`.
pub fn load_questions(path: &Path) -> Result<Vec<QuestionItem>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: QuestionItem = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if !seen.insert(q.question_id.clone()) {
            return Err(Error::parse(path, i + 1, format!("duplicate question_id {}", q.question_id)));
        }
        out.push(q);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    /// `(domain, index path, chunk count)` per domain.
    pub indexes: Vec<(String, PathBuf, usize)>,
}

/// Build and persist one index per roster domain.
pub fn cmd_ingest(cfg: &ExperimentConfig, opts: &Options) -> Result<IngestSummary> {
    let chunking = cfg.chunk_config()?;
    let embedder = cfg.embedder()?;
    let out = opts.out_dir(cfg);
    let root = cfg.corpora_root();
    let mut indexes = Vec::new();
    for domain in cfg.domains() {
        let docs = load_corpus(&root.join(&domain), &domain)?;
        let mut store = VectorStore::new(embedder.dim());
        for doc in &docs {
            for chunk in chunk_document(doc, chunking) {
                let v = embedder
                    .embed(&chunk.text)
                    .map_err(|e| Error::Runtime(format!("embedding {}: {e}", chunk.chunk_id)))?;
                store.insert(&chunk, v)?;
            }
        }
        if store.is_empty() {
            log::warn!("domain {domain}: corpus is empty, writing an empty index");
        }
        let path = index_path(&out, &domain);
        save_index(&store, &path)?;
        log::info!("domain {domain}: {} documents, {} chunks -> {}", docs.len(), store.len(), path.display());
        indexes.push((domain, path, store.len()));
    }
    Ok(IngestSummary { indexes })
}

fn selected_flows(cfg: &ExperimentConfig, opts: &Options) -> Result<Vec<FlowConfig>> {
    let flows = cfg.flows()?;
    if let Some(wanted) = &opts.flows {
        for id in wanted {
            if !flows.iter().any(|f| &f.flow_id == id) {
                return Err(Error::config(format!("--flows names unknown flow {id:?}")));
            }
        }
    }
    Ok(flows.into_iter().filter(|f| opts.wants(&f.flow_id)).collect())
}

/// Stores for every corpus a selected flow retrieves from.
pub fn build_library(cfg: &ExperimentConfig, flows: &[FlowConfig], out: &Path) -> Result<Library> {
    let embedder = cfg.embedder()?;
    let dim = embedder.dim();
    let mut library = Library::new(embedder, cfg.rag_settings()?);
    if let Some(fb) = cfg.fallback_provider()? {
        library = library.with_fallback(fb);
    }
    let mut corpora: Vec<&str> = Vec::new();
    for f in flows {
        for a in &f.agents {
            if let Knowledge::LocalRag { corpus } = &a.knowledge {
                if !corpora.contains(&corpus.as_str()) {
                    corpora.push(corpus);
                }
            }
        }
    }
    for corpus in corpora {
        let path = index_path(out, corpus);
        if !path.exists() {
            return Err(Error::config(format!(
                "no index for domain {corpus} at {}; run `ingest` first",
                path.display()
            )));
        }
        let store = load_index(&path)?;
        if store.dim() != dim {
            return Err(Error::config(format!(
                "index {} has dimension {}, embedder has {dim}; re-run `ingest`",
                path.display(),
                store.dim()
            )));
        }
        library.add_store(corpus, store);
    }
    Ok(library)
}

/// Read run records, dropping an unparseable final line (an interrupted append).
pub fn read_records(path: &Path) -> Result<Vec<FlowRunRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<FlowRunRecord>(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => {
                log::warn!("{}:{}: ignoring incomplete trailing record", path.display(), i + 1);
            }
            Err(e) => return Err(Error::parse(path, i + 1, e.to_string())),
        }
    }
    Ok(out)
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn to_line<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string(v).expect("records serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub produced: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Run every selected (flow, question) pair that has no completed record yet.
pub fn cmd_run(cfg: &ExperimentConfig, opts: &Options) -> Result<RunSummary> {
    let backend = cfg.backend()?;
    let flows = selected_flows(cfg, opts)?;
    let all_flows = cfg.flows()?;
    let questions = load_questions(&cfg.questions_path())?;
    let out = opts.out_dir(cfg);
    let library = build_library(cfg, &flows, &out)?;
    let model = cfg.model_settings();
    let records_path = out.join(RECORDS_FILE);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let mut existing = if opts.force { Vec::new() } else { read_records(&records_path)? };
    if opts.force {
        // Keep records of flows outside the selection.
        existing = read_records(&records_path)?.into_iter().filter(|r| !opts.wants(&r.flow_id)).collect();
    }
    let done: HashSet<(String, String)> =
        existing.iter().filter(|r| r.is_completed()).map(|r| (r.flow_id.clone(), r.question_id.clone())).collect();

    let mut jobs = Vec::new();
    let mut skipped = 0;
    for f in &flows {
        for q in &questions {
            if done.contains(&(f.flow_id.clone(), q.question_id.clone())) {
                skipped += 1;
            } else {
                jobs.push((f, q));
            }
        }
    }
    existing.retain(|r| done.contains(&(r.flow_id.clone(), r.question_id.clone())));

    // Rewrite what we keep so the append log starts clean.
    let kept: String = existing.iter().map(to_line).collect();
    write_atomic(&records_path, &kept)?;
    let log_file = fs::OpenOptions::new().append(true).open(&records_path).map_err(|e| Error::io(&records_path, e))?;
    let log_file = Mutex::new(log_file);

    let wall = MonotonicClock::default();
    let clock: &dyn Clock = if backend.is_virtual_time() { &NullClock } else { &wall };
    let completer = backend.as_completer();
    let next = AtomicUsize::new(0);
    let produced: Mutex<Vec<FlowRunRecord>> = Mutex::new(Vec::with_capacity(jobs.len()));
    let io_error: Mutex<Option<Error>> = Mutex::new(None);
    let workers = cfg.parallelism.min(jobs.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((flow, q)) = jobs.get(i) else { break };
                let record = run_flow(flow, q, &library, completer, &model, clock);
                if let crossflow_core::FlowStatus::Failed { failure } = &record.status {
                    log::warn!("flow {} question {}: {failure}", record.flow_id, record.question_id);
                }
                let line = to_line(&record);
                {
                    let mut f = log_file.lock().unwrap_or_else(|e| e.into_inner());
                    if let Err(e) = f.write_all(line.as_bytes()).and_then(|_| f.flush()) {
                        io_error.lock().unwrap().get_or_insert(Error::io(&records_path, e));
                    }
                }
                log::debug!("flow {} question {} done", record.flow_id, record.question_id);
                produced.lock().unwrap_or_else(|e| e.into_inner()).push(record);
            });
        }
    });
    if let Some(e) = io_error.into_inner().unwrap() {
        return Err(e);
    }
    let produced = produced.into_inner().unwrap();
    let failed = produced.iter().filter(|r| !r.is_completed()).count();
    let summary = RunSummary { produced: produced.len(), skipped, failed };

    // Canonical order: configured flow order, then question order.
    let mut all = existing;
    all.extend(produced);
    let flow_pos: HashMap<&str, usize> = all_flows.iter().enumerate().map(|(i, f)| (f.flow_id.as_str(), i)).collect();
    let q_pos: HashMap<&str, usize> = questions.iter().enumerate().map(|(i, q)| (q.question_id.as_str(), i)).collect();
    all.sort_by(|a, b| {
        let key = |r: &FlowRunRecord| {
            (
                flow_pos.get(r.flow_id.as_str()).copied().unwrap_or(usize::MAX),
                q_pos.get(r.question_id.as_str()).copied().unwrap_or(usize::MAX),
                r.flow_id.clone(),
                r.question_id.clone(),
            )
        };
        key(a).cmp(&key(b))
    });
    let body: String = all.iter().map(to_line).collect();
    write_atomic(&records_path, &body)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateSummary {
    pub metrics: Vec<MetricRecord>,
    pub aggregates: Vec<FlowAggregate>,
    pub skipped: usize,
    pub report: String,
}

/// Score every completed record against its question's expected answer.
pub fn cmd_evaluate(cfg: &ExperimentConfig, opts: &Options) -> Result<EvaluateSummary> {
    let out = opts.out_dir(cfg);
    let records_path = out.join(RECORDS_FILE);
    if !records_path.exists() {
        return Err(Error::config(format!("no run records at {}; run `run` first", records_path.display())));
    }
    let records = read_records(&records_path)?;
    let questions = load_questions(&cfg.questions_path())?;
    let by_id: HashMap<&str, &QuestionItem> = questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
    let embedder = cfg.embedder()?;

    let mut scorable = Vec::new();
    let mut skipped = 0;
    for r in records.iter().filter(|r| opts.wants(&r.flow_id)) {
        if !r.is_completed() {
            log::warn!("flow {} question {}: run failed, not scored", r.flow_id, r.question_id);
            skipped += 1;
            continue;
        }
        let Some(reference) = by_id
            .get(r.question_id.as_str())
            .and_then(|q| q.expected_answer.as_deref())
            .filter(|a| !a.trim().is_empty())
        else {
            log::warn!("question {}: no expected_answer, record for flow {} skipped", r.question_id, r.flow_id);
            skipped += 1;
            continue;
        };
        scorable.push((r, reference));
    }

    // Records are scored independently; chunks keep the output in record order.
    let per_worker = scorable.len().div_ceil(cfg.parallelism.max(1)).max(1);
    let embedder = embedder.as_ref();
    let scored: Vec<Result<MetricRecord>> = std::thread::scope(|s| {
        let handles: Vec<_> = scorable
            .chunks(per_worker)
            .map(|chunk| {
                s.spawn(move || chunk.iter().map(|(r, reference)| score(r, reference, embedder)).collect::<Vec<_>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("scoring worker panicked")).collect()
    });
    let metrics = scored.into_iter().collect::<Result<Vec<_>>>()?;
    if metrics.is_empty() {
        return Err(Error::Runtime("no scorable run records".into()));
    }
    let aggregates = ordered_aggregates(&metrics)?;
    let report = render_table(&aggregates);
    write_atomic(&out.join(METRICS_FILE), &metrics.iter().map(to_line).collect::<String>())?;
    write_atomic(&out.join(AGGREGATES_FILE), &(serde_json::to_string_pretty(&aggregates).expect("serializes") + "\n"))?;
    write_atomic(&out.join(REPORT_CSV), &render_csv(&aggregates)?)?;
    write_atomic(&out.join(REPORT_TXT), &report)?;
    Ok(EvaluateSummary { metrics, aggregates, skipped, report })
}

fn score(r: &FlowRunRecord, reference: &str, embedder: &dyn crossflow_core::Embedder) -> Result<MetricRecord> {
    let cosine = cosine_answer_similarity(&r.final_answer, reference, embedder)
        .map_err(|e| Error::Runtime(format!("embedding answers for {}: {e}", r.question_id)))?;
    Ok(MetricRecord {
        flow_id: r.flow_id.clone(),
        question_id: r.question_id.clone(),
        rouge1: rouge1(&r.final_answer, reference),
        cosine,
        tokens_per_second: throughput(r.total_completion_tokens, r.total_elapsed)?,
        backend_tokens_per_second: throughput(r.total_completion_tokens, r.backend_elapsed)?,
    })
}

/// Per-flow means in order of first appearance.
fn ordered_aggregates(metrics: &[MetricRecord]) -> Result<Vec<FlowAggregate>> {
    let mut by_flow = aggregate(metrics)?;
    let mut order: Vec<&str> = Vec::new();
    for m in metrics {
        if !order.contains(&m.flow_id.as_str()) {
            order.push(&m.flow_id);
        }
    }
    Ok(order.into_iter().filter_map(|f| by_flow.remove(f)).collect())
}

/// Render the stored aggregates without recomputing anything.
pub fn cmd_report(cfg: &ExperimentConfig, opts: &Options) -> Result<String> {
    let path = opts.out_dir(cfg).join(AGGREGATES_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::config(format!("cannot read {} ({e}); run `evaluate` first", path.display())))?;
    let aggs: Vec<FlowAggregate> =
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.line(), e.to_string()))?;
    let aggs: Vec<_> = aggs.into_iter().filter(|a| opts.wants(&a.flow_id)).collect();
    Ok(render_table(&aggs))
}

pub const REPORT_COLUMNS: [&str; 6] =
    ["flow", "avg_tokens_per_sec", "avg_rouge1_precision", "avg_rouge1_recall", "avg_rouge1_f1", "avg_cosine"];

pub fn render_csv(aggs: &[FlowAggregate]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Runtime(format!("csv: {e}"));
    w.write_record(REPORT_COLUMNS).map_err(csv_err)?;
    for a in aggs {
        w.write_record([
            a.flow_id.clone(),
            format!("{:.6}", a.tokens_per_second),
            format!("{:.6}", a.precision),
            format!("{:.6}", a.recall),
            format!("{:.6}", a.f1),
            format!("{:.6}", a.cosine),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Runtime(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render_table(aggs: &[FlowAggregate]) -> String {
    let header = ["flow", "avg tok/s", "ROUGE-1 P", "ROUGE-1 R", "F1*", "cosine"];
    let rows: Vec<[String; 6]> = aggs
        .iter()
        .map(|a| {
            [
                a.flow_id.clone(),
                format!("{:.2}", a.tokens_per_second),
                format!("{:.4}", a.precision),
                format!("{:.4}", a.recall),
                format!("{:.4}", a.f1),
                format!("{:.4}", a.cosine),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[&str]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&rule.iter().map(String::as_str).collect::<Vec<_>>());
    for r in &rows {
        line(&r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out.push_str("* F1 is the harmonic mean of ROUGE-1 precision and recall, reported as an extension.\n");
    out
}
