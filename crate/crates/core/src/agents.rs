//! ReAct agents and the sequential multi-agent orchestrator.
//!
//! An agent run is a bounded observe → think → act loop. The observation is
//! the rendered prompt; thinking is one [`Completer::complete`] call; the
//! action is parsed from the model text ([`Directive`]). `RETRIEVE:` pulls
//! context from the agent's corpus into the next observation, `ANSWER:`
//! ends the run.
//!
//! A flow runs agents strictly in order. What each agent sees of its
//! predecessors is decided by the flow's [`ContextPolicy`].

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, Completer, CompletionRequest, RequestTag};
use crate::rag::{assemble_prompt, ContextBundle, Library, RelevanceLabel};

/// Monotonic time source. [`NullClock`] makes runs timing-free.
pub trait Clock: Send + Sync {
    /// Time since an arbitrary fixed origin.
    fn now(&self) -> Duration;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now(&self) -> Duration {
        Duration::ZERO
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Knowledge {
    None,
    LocalRag { corpus: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent_id: String,
    pub domain: String,
    pub system_prompt: String,
    pub knowledge: Knowledge,
    pub max_react_steps: usize,
}

impl AgentSpec {
    pub const DEFAULT_MAX_STEPS: usize = 4;

    pub fn new(agent_id: impl Into<String>, domain: impl Into<String>, system_prompt: impl Into<String>) -> Self {
        Self {
            agent_id: agent_id.into(),
            domain: domain.into(),
            system_prompt: system_prompt.into(),
            knowledge: Knowledge::None,
            max_react_steps: Self::DEFAULT_MAX_STEPS,
        }
    }

    pub fn with_knowledge(mut self, knowledge: Knowledge) -> Self {
        self.knowledge = knowledge;
        self
    }

    pub fn with_max_steps(mut self, steps: usize) -> Self {
        self.max_react_steps = steps;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPolicy {
    FullHistory,
    LastMessageOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub flow_id: String,
    pub name: String,
    pub agents: Vec<AgentSpec>,
    pub context_policy: ContextPolicy,
    /// How knowledge reaches the agents; recorded in run metadata.
    pub retrieval_pathway: String,
    /// The pathway is emulated by the local RAG pipeline.
    pub emulated: bool,
}

impl FlowConfig {
    pub fn new(flow_id: impl Into<String>, agents: Vec<AgentSpec>, context_policy: ContextPolicy) -> Self {
        let flow_id = flow_id.into();
        Self {
            name: flow_id.clone(),
            flow_id,
            agents,
            context_policy,
            retrieval_pathway: "custom".to_string(),
            emulated: false,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.agents.is_empty() {
            return Err(format!("flow {} has no agents", self.flow_id));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if self.agents[..i].iter().any(|b| b.agent_id == a.agent_id) {
                return Err(format!("flow {}: duplicate agent id {}", self.flow_id, a.agent_id));
            }
            if a.max_react_steps == 0 {
                return Err(format!("agent {}: max_react_steps must be >= 1", a.agent_id));
            }
        }
        Ok(())
    }
}

/// The four preset flows over one agent roster, in roster order.
///
/// | id | context policy  | knowledge on every agent |
/// |----|-----------------|--------------------------|
/// | 1  | FullHistory     | local RAG                |
/// | 2  | LastMessageOnly | local RAG (assistant retrieval, emulated) |
/// | 3  | FullHistory     | local RAG (assistant retrieval, emulated) |
/// | 4  | FullHistory     | none                     |
///
/// Each agent's corpus is its `domain`.
pub fn build_flow_presets(roster: &[AgentSpec]) -> Vec<FlowConfig> {
    let with_rag = |a: &AgentSpec| a.clone().with_knowledge(Knowledge::LocalRag { corpus: a.domain.clone() });
    let without = |a: &AgentSpec| a.clone().with_knowledge(Knowledge::None);
    let preset = |id: &str, name: &str, policy, pathway: &str, emulated, rag: bool| FlowConfig {
        flow_id: id.to_string(),
        name: name.to_string(),
        agents: roster.iter().map(|a| if rag { with_rag(a) } else { without(a) }).collect(),
        context_policy: policy,
        retrieval_pathway: pathway.to_string(),
        emulated,
    };
    alloc::vec![
        preset("1", "orchestrated-rag", ContextPolicy::FullHistory, "local-rag", false, true),
        preset("2", "sequential-assistant", ContextPolicy::LastMessageOnly, "assistant-retrieval", true, true),
        preset("3", "orchestrated-assistant", ContextPolicy::FullHistory, "assistant-retrieval", true, true),
        preset("4", "orchestrated-baseline", ContextPolicy::FullHistory, "none", false, false),
    ]
}

/// The action parsed from one model reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "payload", rename_all = "snake_case")]
pub enum Directive {
    Retrieve(String),
    Answer(String),
}

impl Directive {
    /// The last line starting with `RETRIEVE:` or `ANSWER:` decides. An
    /// `ANSWER:` payload runs to the end of the text. Text with no directive
    /// (or an empty `RETRIEVE:`) is taken as the answer in full.
    pub fn parse(text: &str) -> Self {
        let lines: Vec<&str> = text.lines().collect();
        for (i, line) in lines.iter().enumerate().rev() {
            let line = line.trim_start();
            if let Some(rest) = line.strip_prefix("ANSWER:") {
                let mut payload = String::from(rest);
                for more in &lines[i + 1..] {
                    payload.push('\n');
                    payload.push_str(more);
                }
                return Directive::Answer(payload.trim().to_string());
            }
            if let Some(rest) = line.strip_prefix("RETRIEVE:") {
                let query = rest.trim();
                if query.is_empty() {
                    break;
                }
                return Directive::Retrieve(query.to_string());
            }
        }
        Directive::Answer(text.trim().to_string())
    }
}

/// What a retrieval action produced, kept in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub query: String,
    pub label: Option<RelevanceLabel>,
    pub hit_ids: Vec<String>,
    pub fallback_snippets: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// The full prompt the model saw.
    pub observation: String,
    /// Raw model reply.
    pub thought: String,
    pub action: Directive,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalTrace>,
    #[serde(with = "secs")]
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub agent_id: String,
    pub content: String,
    pub steps: Vec<Step>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Sum of backend time over all steps.
    #[serde(with = "secs")]
    pub elapsed: Duration,
    /// The step cap was hit before an `ANSWER:`.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum FailureReason {
    Backend(BackendError),
    MissingCorpus(String),
}

impl core::fmt::Display for FailureReason {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            FailureReason::Backend(e) => write!(f, "backend error: {e}"),
            FailureReason::MissingCorpus(c) => write!(f, "corpus {c:?} is not indexed"),
        }
    }
}

/// An agent that could not finish, with everything it did before failing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("agent {agent_id} failed: {reason}")]
pub struct AgentFailure {
    pub agent_id: String,
    pub reason: FailureReason,
    pub partial: AgentMessage,
}

/// Backend parameters shared by every call in a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            model_id: "mock".to_string(),
            temperature: 0.0,
            max_output_tokens: CompletionRequest::DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionItem {
    pub question_id: String,
    pub domain: String,
    pub question: String,
    /// Reference text for scoring. Absent or empty items are not scored.
    #[serde(default)]
    pub expected_answer: Option<String>,
}

const ANSWER_GUIDE: &str = "Finish your reply with a final line `ANSWER: <your answer>`.";
const RETRIEVE_GUIDE: &str =
    "To consult your knowledge base first, end your reply with `RETRIEVE: <search query>` instead.";

fn system_prompt_for(spec: &AgentSpec) -> String {
    let mut s = spec.system_prompt.clone();
    s.push('\n');
    s.push_str(ANSWER_GUIDE);
    if matches!(spec.knowledge, Knowledge::LocalRag { .. }) {
        s.push(' ');
        s.push_str(RETRIEVE_GUIDE);
    }
    s
}

fn merge_bundle(acc: &mut ContextBundle, new: ContextBundle) {
    for hit in new.hits {
        if !acc.hits.iter().any(|h| h.chunk_id == hit.chunk_id) {
            acc.hits.push(hit);
        }
    }
    for s in new.fallback_snippets {
        if !acc.fallback_snippets.contains(&s) {
            acc.fallback_snippets.push(s);
        }
    }
    acc.label = new.label;
}

/// Run one agent's ReAct loop on `observed` (the question plus whatever the
/// context policy lets it see).
#[allow(clippy::result_large_err)] // the partial message is the point of the error
pub fn run_agent(
    spec: &AgentSpec,
    observed: &str,
    question_id: &str,
    library: &Library,
    backend: &dyn Completer,
    model: &ModelSettings,
) -> Result<AgentMessage, AgentFailure> {
    let system = system_prompt_for(spec);
    let mut context = ContextBundle::empty(observed);
    let mut msg = AgentMessage {
        agent_id: spec.agent_id.clone(),
        content: String::new(),
        steps: Vec::new(),
        prompt_tokens: 0,
        completion_tokens: 0,
        elapsed: Duration::ZERO,
        truncated: false,
    };
    let fail = |msg: AgentMessage, reason| AgentFailure { agent_id: spec.agent_id.clone(), reason, partial: msg };

    let max_steps = spec.max_react_steps.max(1);
    for step in 0..max_steps {
        let observation = assemble_prompt(observed, &context, &system);
        let req = CompletionRequest {
            prompt: observation.clone(),
            model_id: model.model_id.clone(),
            temperature: model.temperature,
            max_output_tokens: model.max_output_tokens,
            tag: Some(RequestTag { agent_id: spec.agent_id.clone(), question_id: question_id.to_string(), step }),
        };
        let result = match backend.complete(&req) {
            Ok(r) => r,
            Err(e) => return Err(fail(msg, FailureReason::Backend(e))),
        };
        msg.prompt_tokens += result.prompt_tokens;
        msg.completion_tokens += result.completion_tokens;
        msg.elapsed += result.elapsed;

        let action = Directive::parse(&result.text);
        let mut trace = Step {
            observation,
            thought: result.text,
            action: action.clone(),
            retrieval: None,
            elapsed: result.elapsed,
        };
        match action {
            Directive::Answer(answer) => {
                msg.content = answer;
                msg.steps.push(trace);
                return Ok(msg);
            }
            Directive::Retrieve(query) => {
                let bundle = match &spec.knowledge {
                    Knowledge::None => None,
                    Knowledge::LocalRag { corpus } => match library.retrieve(corpus, &query) {
                        Some(b) => Some(b),
                        None => {
                            msg.steps.push(trace);
                            return Err(fail(msg, FailureReason::MissingCorpus(corpus.clone())));
                        }
                    },
                };
                trace.retrieval = Some(match bundle {
                    Some(b) => {
                        let t = RetrievalTrace {
                            query,
                            label: Some(b.label),
                            hit_ids: b.hits.iter().map(|h| h.chunk_id.clone()).collect(),
                            fallback_snippets: b.fallback_snippets.len(),
                            warnings: b.warnings.clone(),
                        };
                        merge_bundle(&mut context, b);
                        t
                    }
                    None => RetrievalTrace {
                        query,
                        label: None,
                        hit_ids: Vec::new(),
                        fallback_snippets: 0,
                        warnings: alloc::vec!["agent has no knowledge source".to_string()],
                    },
                });
                msg.steps.push(trace);
            }
        }
    }
    msg.truncated = true;
    msg.content = msg.steps.last().map(|s| s.thought.clone()).unwrap_or_default();
    Ok(msg)
}

/// The text an agent observes given what ran before it.
///
/// The first agent sees only the question. After that, FullHistory appends
/// every prior message as `[<agent_id>]: <content>` lines; LastMessageOnly
/// appends only the immediately preceding one.
pub fn build_observation(policy: ContextPolicy, transcript: &[AgentMessage], question: &str) -> String {
    let visible: &[AgentMessage] = match policy {
        ContextPolicy::FullHistory => transcript,
        ContextPolicy::LastMessageOnly => {
            let n = transcript.len();
            &transcript[n.saturating_sub(1)..]
        }
    };
    let mut out = String::from(question);
    for m in visible {
        out.push_str("\n[");
        out.push_str(&m.agent_id);
        out.push_str("]: ");
        out.push_str(&m.content);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum FlowStatus {
    Completed,
    Failed { failure: AgentFailure },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRunRecord {
    pub flow_id: String,
    pub question_id: String,
    pub final_answer: String,
    pub transcript: Vec<AgentMessage>,
    /// End-to-end time for the question, never less than `backend_elapsed`.
    #[serde(with = "secs")]
    pub total_elapsed: Duration,
    /// Sum of backend time over the transcript.
    #[serde(with = "secs")]
    pub backend_elapsed: Duration,
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    pub retrieval_pathway: String,
    pub emulated: bool,
    pub status: FlowStatus,
}

impl FlowRunRecord {
    pub fn is_completed(&self) -> bool {
        matches!(self.status, FlowStatus::Completed)
    }
}

/// Run every agent of `flow` in order on one question.
///
/// An agent failure stops the flow: the record keeps the finished agents,
/// the failure (with its partial trace) goes in `status`.
pub fn run_flow(
    flow: &FlowConfig,
    question: &QuestionItem,
    library: &Library,
    backend: &dyn Completer,
    model: &ModelSettings,
    clock: &dyn Clock,
) -> FlowRunRecord {
    let start = clock.now();
    let mut transcript: Vec<AgentMessage> = Vec::with_capacity(flow.agents.len());
    let mut status = FlowStatus::Completed;
    for spec in &flow.agents {
        let observed = build_observation(flow.context_policy, &transcript, &question.question);
        match run_agent(spec, &observed, &question.question_id, library, backend, model) {
            Ok(msg) => transcript.push(msg),
            Err(failure) => {
                status = FlowStatus::Failed { failure };
                break;
            }
        }
    }
    let wall = clock.now().saturating_sub(start);
    let mut backend_elapsed: Duration = transcript.iter().map(|m| m.elapsed).sum();
    let mut prompt_tokens: u64 = transcript.iter().map(|m| m.prompt_tokens).sum();
    let mut completion_tokens: u64 = transcript.iter().map(|m| m.completion_tokens).sum();
    if let FlowStatus::Failed { failure } = &status {
        backend_elapsed += failure.partial.elapsed;
        prompt_tokens += failure.partial.prompt_tokens;
        completion_tokens += failure.partial.completion_tokens;
    }
    FlowRunRecord {
        flow_id: flow.flow_id.clone(),
        question_id: question.question_id.clone(),
        final_answer: transcript.last().map(|m| m.content.clone()).unwrap_or_default(),
        transcript,
        total_elapsed: wall.max(backend_elapsed),
        backend_elapsed,
        total_prompt_tokens: prompt_tokens,
        total_completion_tokens: completion_tokens,
        retrieval_pathway: flow.retrieval_pathway.clone(),
        emulated: flow.emulated,
        status,
    }
}

/// Durations as floating-point seconds.
pub mod secs {
    use core::time::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{whitespace_token_count, CompletionResult};
    use crate::corpus::{chunk_document, ChunkConfig, Document};
    use crate::embed::{hash_embed, HashEmbedder};
    use crate::rag::RagSettings;
    use crate::store::VectorStore;
    use alloc::collections::BTreeMap;
    use alloc::sync::Arc;
    use alloc::vec;
    use alloc::vec::Vec;
    use std::sync::Mutex;

    /// Replies from a script keyed by (agent, step) and records every prompt.
    #[derive(Default)]
    struct Script {
        replies: BTreeMap<String, Vec<String>>,
        prompts: Mutex<Vec<(String, String)>>,
        fail_for: Option<String>,
    }

    impl Script {
        fn reply(mut self, agent: &str, steps: &[&str]) -> Self {
            self.replies.insert(agent.to_string(), steps.iter().map(|s| s.to_string()).collect());
            self
        }

        fn prompt_of(&self, agent: &str) -> String {
            self.prompts.lock().unwrap().iter().rev().find(|(a, _)| a == agent).unwrap().1.clone()
        }
    }

    impl Completer for Script {
        fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError> {
            let tag = req.tag.clone().unwrap();
            self.prompts.lock().unwrap().push((tag.agent_id.clone(), req.prompt.clone()));
            if self.fail_for.as_deref() == Some(tag.agent_id.as_str()) {
                return Err(BackendError::new(crate::backend::BackendErrorKind::Status(500), "boom"));
            }
            let steps = &self.replies[&tag.agent_id];
            let text = steps[tag.step.min(steps.len() - 1)].clone();
            Ok(CompletionResult {
                completion_tokens: whitespace_token_count(&text),
                prompt_tokens: whitespace_token_count(&req.prompt),
                text,
                elapsed: Duration::from_millis(10),
                tokens_estimated: false,
            })
        }
    }

    fn library() -> Library {
        let mut store = VectorStore::new(256);
        let docs = [
            Document::new("gap.txt", "physics", "the bandgap of hexagonal boron nitride is about six electron volts"),
            Document::new("other.txt", "physics", "graphene is a semimetal with zero gap"),
        ];
        for d in &docs {
            for c in chunk_document(d, ChunkConfig::new(8, 2).unwrap()) {
                store.insert(&c, hash_embed(&c.text, 256)).unwrap();
            }
        }
        let mut lib = Library::new(Arc::new(HashEmbedder::default()), RagSettings { k: 2, ..Default::default() });
        lib.add_store("physics", store);
        lib
    }

    fn msg(id: &str, content: &str) -> AgentMessage {
        AgentMessage {
            agent_id: id.into(),
            content: content.into(),
            steps: vec![],
            prompt_tokens: 0,
            completion_tokens: 0,
            elapsed: Duration::ZERO,
            truncated: false,
        }
    }

    fn question() -> QuestionItem {
        QuestionItem {
            question_id: "q1".into(),
            domain: "physics".into(),
            question: "What is the bandgap?".into(),
            expected_answer: Some("six electron volts".into()),
        }
    }

    #[test]
    fn directive_parsing() {
        assert_eq!(Directive::parse("ANSWER: 42"), Directive::Answer("42".into()));
        assert_eq!(Directive::parse("thinking...\nRETRIEVE: bandgap"), Directive::Retrieve("bandgap".into()));
        assert_eq!(Directive::parse("just text"), Directive::Answer("just text".into()));
        assert_eq!(Directive::parse("x\nANSWER: line one\nline two\n"), Directive::Answer("line one\nline two".into()));
        assert_eq!(Directive::parse("RETRIEVE: a\nANSWER: b"), Directive::Answer("b".into()));
        assert_eq!(Directive::parse("RETRIEVE:   "), Directive::Answer("RETRIEVE:".into()));
        assert_eq!(Directive::parse("  ANSWER:"), Directive::Answer("".into()));
    }

    #[test]
    fn immediate_answer_is_one_step() {
        let spec = AgentSpec::new("a", "physics", "sys");
        let backend = Script::default().reply("a", &["ANSWER: 42"]);
        let m = run_agent(&spec, "q?", "q1", &library(), &backend, &ModelSettings::default()).unwrap();
        assert_eq!(m.steps.len(), 1);
        assert_eq!(m.content, "42");
        assert!(!m.truncated);
        assert_eq!(m.completion_tokens, 2);
    }

    #[test]
    fn retrieve_then_answer() {
        let spec =
            AgentSpec::new("a", "physics", "sys").with_knowledge(Knowledge::LocalRag { corpus: "physics".into() });
        let backend = Script::default().reply("a", &["RETRIEVE: bandgap", "ANSWER: found"]);
        let lib = library();
        let m = run_agent(&spec, "What is the bandgap?", "q1", &lib, &backend, &ModelSettings::default()).unwrap();
        assert_eq!(m.steps.len(), 2);
        assert_eq!(m.content, "found");
        let expected = lib.retrieve("physics", "bandgap").unwrap();
        assert!(!expected.hits.is_empty());
        for hit in &expected.hits {
            assert!(m.steps[1].observation.contains(&hit.text));
            assert!(!m.steps[0].observation.contains(&hit.text));
        }
        let trace = m.steps[0].retrieval.as_ref().unwrap();
        assert_eq!(trace.query, "bandgap");
        assert_eq!(trace.hit_ids, expected.hits.iter().map(|h| h.chunk_id.clone()).collect::<Vec<_>>());
        assert!(m.steps[0].observation.contains("RETRIEVE:"));
    }

    #[test]
    fn step_cap_truncates() {
        let spec =
            AgentSpec::new("a", "physics", "sys").with_knowledge(Knowledge::LocalRag { corpus: "physics".into() });
        let backend =
            Script::default().reply("a", &["RETRIEVE: one", "RETRIEVE: two", "RETRIEVE: three", "RETRIEVE: four"]);
        let m = run_agent(&spec, "q", "q1", &library(), &backend, &ModelSettings::default()).unwrap();
        assert!(m.truncated);
        assert_eq!(m.steps.len(), 4);
        assert_eq!(m.content, "RETRIEVE: four");
    }

    #[test]
    fn missing_corpus_fails_with_trace() {
        let spec = AgentSpec::new("a", "chem", "sys").with_knowledge(Knowledge::LocalRag { corpus: "chem".into() });
        let backend = Script::default().reply("a", &["RETRIEVE: x"]);
        let err = run_agent(&spec, "q", "q1", &library(), &backend, &ModelSettings::default()).unwrap_err();
        assert_eq!(err.reason, FailureReason::MissingCorpus("chem".into()));
        assert_eq!(err.partial.steps.len(), 1);
    }

    #[test]
    fn retrieve_without_knowledge_continues() {
        let spec = AgentSpec::new("a", "physics", "sys");
        let backend = Script::default().reply("a", &["RETRIEVE: x", "ANSWER: done"]);
        let m = run_agent(&spec, "q", "q1", &library(), &backend, &ModelSettings::default()).unwrap();
        assert_eq!(m.content, "done");
        assert_eq!(m.steps[0].retrieval.as_ref().unwrap().label, None);
        assert!(!m.steps[0].observation.contains("RETRIEVE:"));
    }

    #[test]
    fn observation_policies() {
        let t = [msg("a1", "first"), msg("a2", "second")];
        let full = build_observation(ContextPolicy::FullHistory, &t, "Q");
        assert_eq!(full, "Q\n[a1]: first\n[a2]: second");
        let last = build_observation(ContextPolicy::LastMessageOnly, &t, "Q");
        assert_eq!(last, "Q\n[a2]: second");
        assert!(!last.contains("first"));
        assert_eq!(build_observation(ContextPolicy::FullHistory, &[], "Q"), "Q");
        assert_eq!(build_observation(ContextPolicy::LastMessageOnly, &[], "Q"), "Q");
    }

    fn three_agents(policy: ContextPolicy) -> (FlowConfig, Script) {
        let agents = vec![
            AgentSpec::new("a1", "physics", "s1"),
            AgentSpec::new("a2", "physics", "s2"),
            AgentSpec::new("a3", "physics", "s3"),
        ];
        let script = Script::default()
            .reply("a1", &["ANSWER: SENTINEL_ONE"])
            .reply("a2", &["ANSWER: SENTINEL_TWO"])
            .reply("a3", &["ANSWER: done"]);
        (FlowConfig::new("t", agents, policy), script)
    }

    #[test]
    fn full_history_flow() {
        let (flow, script) = three_agents(ContextPolicy::FullHistory);
        let rec = run_flow(&flow, &question(), &library(), &script, &ModelSettings::default(), &NullClock);
        let p = script.prompt_of("a3");
        assert!(p.contains("SENTINEL_ONE") && p.contains("SENTINEL_TWO"));
        assert!(p.find("SENTINEL_ONE") < p.find("SENTINEL_TWO"));
        assert_eq!(rec.final_answer, "done");
        assert_eq!(rec.transcript.len(), 3);
        assert_eq!(rec.total_completion_tokens, 6);
        assert_eq!(rec.backend_elapsed, Duration::from_millis(30));
        assert_eq!(rec.total_elapsed, Duration::from_millis(30));
        assert!(rec.is_completed());
    }

    #[test]
    fn last_message_flow() {
        let (flow, script) = three_agents(ContextPolicy::LastMessageOnly);
        run_flow(&flow, &question(), &library(), &script, &ModelSettings::default(), &NullClock);
        let p = script.prompt_of("a3");
        assert!(p.contains("SENTINEL_TWO"));
        assert!(!p.contains("SENTINEL_ONE"));
        assert!(script.prompt_of("a2").contains("SENTINEL_ONE"));
    }

    #[test]
    fn single_agent_flow() {
        let flow = FlowConfig::new("x", vec![AgentSpec::new("solo", "physics", "s")], ContextPolicy::FullHistory);
        let script = Script::default().reply("solo", &["ANSWER: only me"]);
        let rec = run_flow(&flow, &question(), &library(), &script, &ModelSettings::default(), &NullClock);
        assert_eq!(rec.final_answer, "only me");
    }

    #[test]
    fn failure_stops_flow() {
        let (flow, mut script) = three_agents(ContextPolicy::FullHistory);
        script.fail_for = Some("a2".into());
        let rec = run_flow(&flow, &question(), &library(), &script, &ModelSettings::default(), &NullClock);
        assert_eq!(rec.transcript.len(), 1);
        assert!(!rec.is_completed());
        match &rec.status {
            FlowStatus::Failed { failure } => assert_eq!(failure.agent_id, "a2"),
            _ => unreachable!(),
        }
        assert!(script.prompts.lock().unwrap().iter().all(|(a, _)| a != "a3"));
    }

    #[test]
    fn presets_match_the_four_flows() {
        let roster = vec![AgentSpec::new("bn", "boron_nitride", "s"), AgentSpec::new("ai", "ai", "s")];
        let flows = build_flow_presets(&roster);
        assert_eq!(flows.len(), 4);
        let ids: Vec<_> = flows.iter().map(|f| f.flow_id.as_str()).collect();
        assert_eq!(ids, ["1", "2", "3", "4"]);
        assert_eq!(flows[1].context_policy, ContextPolicy::LastMessageOnly);
        for i in [0, 2, 3] {
            assert_eq!(flows[i].context_policy, ContextPolicy::FullHistory);
        }
        assert!(flows[3].agents.iter().all(|a| a.knowledge == Knowledge::None));
        for f in &flows[..3] {
            for a in &f.agents {
                assert_eq!(a.knowledge, Knowledge::LocalRag { corpus: a.domain.clone() });
            }
        }
        assert_eq!(flows[0].agents, flows[2].agents);
        assert_ne!(flows[0].retrieval_pathway, flows[2].retrieval_pathway);
        for f in &flows {
            assert!(f.validate().is_ok());
            assert_eq!(f.agents.iter().map(|a| &a.agent_id).collect::<Vec<_>>(), ["bn", "ai"]);
        }
    }

    #[test]
    fn flow_validation() {
        assert!(FlowConfig::new("e", vec![], ContextPolicy::FullHistory).validate().is_err());
        let dup = vec![AgentSpec::new("a", "d", "s"), AgentSpec::new("a", "d", "s")];
        assert!(FlowConfig::new("d", dup, ContextPolicy::FullHistory).validate().is_err());
    }

    struct Ticking(core::sync::atomic::AtomicU64);
    impl Clock for Ticking {
        fn now(&self) -> Duration {
            Duration::from_millis(self.0.fetch_add(100, core::sync::atomic::Ordering::SeqCst))
        }
    }

    #[test]
    fn total_elapsed_uses_clock_when_larger() {
        let (flow, script) = three_agents(ContextPolicy::FullHistory);
        let clock = Ticking(core::sync::atomic::AtomicU64::new(0));
        let rec = run_flow(&flow, &question(), &library(), &script, &ModelSettings::default(), &clock);
        assert_eq!(rec.total_elapsed, Duration::from_millis(100));
        assert!(rec.total_elapsed >= rec.backend_elapsed);
    }
}
