//! Experiment configuration (TOML).
//!
//! ```toml
//! corpora_root = "corpora"          # corpora/<domain>/*.txt|*.md
//! questions = "questions.jsonl"
//! output_dir = "out"
//! parallelism = 4
//! seed = 0                          # reserved
//! chunk_size = 512
//! chunk_overlap = 64
//!
//! [embedding]
//! kind = "hash"                     # hash | http
//! dim = 256
//!
//! [retrieval]
//! k = 5
//!
//! [rag]
//! tau_hi = 0.75
//! tau_lo = 0.40
//! fallback = "none"                 # none | fixture:<path>
//!
//! [backend]
//! kind = "mock"                     # mock | http
//! fixture = "mock.jsonl"
//!
//! [[agents]]
//! agent_id = "bn_agent"
//! domain = "boron_nitride"
//! system_prompt = "You are an expert on boron nitride."
//!
//! [flows]
//! presets = ["1", "2", "3", "4"]
//! ```
//!
//! Unknown keys are rejected. Relative paths resolve against the directory
//! holding the config file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use crossflow_core::{
    build_flow_presets, AgentSpec, ChunkConfig, ContextPolicy, Embedder, FallbackProvider, FlowConfig, HashEmbedder,
    Knowledge, ModelSettings, RagSettings, Thresholds,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fallback::FixtureFallback;
use crate::http::{HttpBackend, HttpEmbedder, HttpSettings, API_KEY_ENV};
use crate::mock::{mock_from_fixture, MockBackend};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpora_root: PathBuf,
    pub questions: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    #[serde(default = "default_chunk_overlap")]
    pub chunk_overlap: usize,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub rag: RagConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub flows: FlowsConfig,
    /// Directory the config was loaded from.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_parallelism() -> usize {
    4
}
fn default_chunk_size() -> usize {
    ChunkConfig::DEFAULT_SIZE
}
fn default_chunk_overlap() -> usize {
    ChunkConfig::DEFAULT_OVERLAP
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    #[serde(default)]
    pub kind: EmbeddingKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Defaults to `backend.base_url`.
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model_id: Option<String>,
}

fn default_dim() -> usize {
    HashEmbedder::DEFAULT_DIM
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { kind: EmbeddingKind::Hash, dim: default_dim(), base_url: None, model_id: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    RagSettings::DEFAULT_K
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { k: default_k() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RagConfig {
    #[serde(default = "default_tau_hi")]
    pub tau_hi: f64,
    #[serde(default = "default_tau_lo")]
    pub tau_lo: f64,
    #[serde(default = "default_fallback")]
    pub fallback: String,
}

fn default_tau_hi() -> f64 {
    Thresholds::DEFAULT_HI
}
fn default_tau_lo() -> f64 {
    Thresholds::DEFAULT_LO
}
fn default_fallback() -> String {
    "none".into()
}

impl Default for RagConfig {
    fn default() -> Self {
        Self { tau_hi: default_tau_hi(), tau_lo: default_tau_lo(), fallback: default_fallback() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default = "default_model")]
    pub model_id: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_inflight")]
    pub max_inflight: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    /// Mock only: scripted delay added per whitespace token of the prompt.
    #[serde(default)]
    pub delay_ms_per_prompt_token: f64,
    /// Mock only: sleep for scripted delays and measure real time.
    #[serde(default)]
    pub realtime: bool,
}

fn default_model() -> String {
    "mock".into()
}
fn default_timeout() -> f64 {
    60.0
}
fn default_inflight() -> usize {
    4
}
fn default_retries() -> u32 {
    2
}
fn default_backoff() -> u64 {
    500
}
fn default_max_tokens() -> u32 {
    crossflow_core::CompletionRequest::DEFAULT_MAX_OUTPUT_TOKENS
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            fixture: None,
            base_url: None,
            model_id: default_model(),
            timeout_s: default_timeout(),
            max_inflight: default_inflight(),
            retries: default_retries(),
            backoff_ms: default_backoff(),
            temperature: 0.0,
            max_output_tokens: default_max_tokens(),
            delay_ms_per_prompt_token: 0.0,
            realtime: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub agent_id: String,
    pub domain: String,
    pub system_prompt: String,
    #[serde(default = "default_steps")]
    pub max_react_steps: usize,
}

fn default_steps() -> usize {
    AgentSpec::DEFAULT_MAX_STEPS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeKind {
    LocalRag,
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomFlow {
    pub flow_id: String,
    #[serde(default)]
    pub name: Option<String>,
    pub context_policy: ContextPolicy,
    pub knowledge: KnowledgeKind,
    /// Agent ids in execution order; defaults to the whole roster.
    #[serde(default)]
    pub agents: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowsConfig {
    #[serde(default = "default_presets")]
    pub presets: Vec<String>,
    #[serde(default)]
    pub custom: Vec<CustomFlow>,
}

fn default_presets() -> Vec<String> {
    ["1", "2", "3", "4"].map(String::from).to_vec()
}

impl Default for FlowsConfig {
    fn default() -> Self {
        Self { presets: default_presets(), custom: Vec::new() }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse without validation or path resolution.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn corpora_root(&self) -> PathBuf {
        self.resolve(&self.corpora_root)
    }

    pub fn questions_path(&self) -> PathBuf {
        self.resolve(&self.questions)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn chunk_config(&self) -> Result<ChunkConfig> {
        Ok(ChunkConfig::new(self.chunk_size, self.chunk_overlap)?)
    }

    pub fn rag_settings(&self) -> Result<RagSettings> {
        Ok(RagSettings { k: self.retrieval.k, thresholds: Thresholds::new(self.rag.tau_hi, self.rag.tau_lo)? })
    }

    pub fn model_settings(&self) -> ModelSettings {
        ModelSettings {
            model_id: self.backend.model_id.clone(),
            temperature: self.backend.temperature,
            max_output_tokens: self.backend.max_output_tokens,
        }
    }

    /// Static checks: tunables, uniqueness, referenced paths.
    pub fn validate(&self) -> Result<()> {
        self.chunk_config()?;
        self.rag_settings()?;
        if self.retrieval.k == 0 {
            return Err(Error::config("retrieval.k must be positive"));
        }
        if self.embedding.dim < 2 {
            return Err(Error::config("embedding.dim must be >= 2"));
        }
        if self.parallelism == 0 {
            return Err(Error::config("parallelism must be positive"));
        }
        if self.agents.is_empty() {
            return Err(Error::config("at least one agent is required"));
        }
        let mut ids = HashSet::new();
        for a in &self.agents {
            if !ids.insert(a.agent_id.as_str()) {
                return Err(Error::config(format!("duplicate agent_id {}", a.agent_id)));
            }
            if a.max_react_steps == 0 {
                return Err(Error::config(format!("agent {}: max_react_steps must be >= 1", a.agent_id)));
            }
        }
        if self.backend.temperature.is_nan() || self.backend.temperature < 0.0 {
            return Err(Error::config("backend.temperature must be >= 0"));
        }
        if self.backend.timeout_s.is_nan() || self.backend.timeout_s <= 0.0 {
            return Err(Error::config("backend.timeout_s must be positive"));
        }
        if self.backend.delay_ms_per_prompt_token.is_nan() || self.backend.delay_ms_per_prompt_token < 0.0 {
            return Err(Error::config("backend.delay_ms_per_prompt_token must be >= 0"));
        }
        self.fallback_path()?;
        let flows = self.flows()?;
        let mut flow_ids = HashSet::new();
        for f in &flows {
            if !flow_ids.insert(f.flow_id.as_str()) {
                return Err(Error::config(format!("duplicate flow id {}", f.flow_id)));
            }
            f.validate().map_err(Error::Config)?;
        }
        for (what, p) in [("corpora_root", self.corpora_root()), ("questions", self.questions_path())] {
            if !p.exists() {
                return Err(Error::config(format!("{what} path does not exist: {}", p.display())));
            }
        }
        if let Some(fb) = self.fallback_path()? {
            if !fb.exists() {
                return Err(Error::config(format!("rag.fallback fixture not found: {}", fb.display())));
            }
        }
        Ok(())
    }

    pub fn roster(&self) -> Vec<AgentSpec> {
        self.agents
            .iter()
            .map(|a| AgentSpec::new(&a.agent_id, &a.domain, &a.system_prompt).with_max_steps(a.max_react_steps))
            .collect()
    }

    /// Domains in roster order, deduplicated.
    pub fn domains(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.agents.iter().filter(|a| seen.insert(a.domain.clone())).map(|a| a.domain.clone()).collect()
    }

    /// Selected presets followed by custom flows.
    pub fn flows(&self) -> Result<Vec<FlowConfig>> {
        let roster = self.roster();
        let presets = build_flow_presets(&roster);
        let mut out = Vec::new();
        for id in &self.flows.presets {
            let f = presets
                .iter()
                .find(|f| &f.flow_id == id)
                .ok_or_else(|| Error::config(format!("unknown preset flow {id:?} (expected 1-4)")))?;
            out.push(f.clone());
        }
        for c in &self.flows.custom {
            let agents = match &c.agents {
                None => roster.clone(),
                Some(ids) => ids
                    .iter()
                    .map(|id| {
                        roster
                            .iter()
                            .find(|a| &a.agent_id == id)
                            .cloned()
                            .ok_or_else(|| Error::config(format!("flow {}: unknown agent {id}", c.flow_id)))
                    })
                    .collect::<Result<_>>()?,
            };
            let agents = agents
                .into_iter()
                .map(|a| {
                    let k = match c.knowledge {
                        KnowledgeKind::LocalRag => Knowledge::LocalRag { corpus: a.domain.clone() },
                        KnowledgeKind::None => Knowledge::None,
                    };
                    a.with_knowledge(k)
                })
                .collect();
            let mut flow = FlowConfig::new(&c.flow_id, agents, c.context_policy);
            flow.name = c.name.clone().unwrap_or_else(|| c.flow_id.clone());
            flow.retrieval_pathway = match c.knowledge {
                KnowledgeKind::LocalRag => "local-rag".into(),
                KnowledgeKind::None => "none".into(),
            };
            out.push(flow);
        }
        Ok(out)
    }

    fn fallback_path(&self) -> Result<Option<PathBuf>> {
        match self.rag.fallback.as_str() {
            "none" => Ok(None),
            other => match other.strip_prefix("fixture:") {
                Some(p) if !p.is_empty() => Ok(Some(self.resolve(Path::new(p)))),
                _ => Err(Error::config(format!("rag.fallback must be none or fixture:<path>, got {other:?}"))),
            },
        }
    }

    pub fn fallback(&self) -> Result<Option<Arc<FixtureFallback>>> {
        self.fallback_path()?.map(|p| FixtureFallback::from_file(&p).map(Arc::new)).transpose()
    }

    pub fn fallback_provider(&self) -> Result<Option<Arc<dyn FallbackProvider>>> {
        Ok(self.fallback()?.map(|f| f as Arc<dyn FallbackProvider>))
    }

    fn http_settings(&self, base_url: Option<&str>, what: &str) -> Result<HttpSettings> {
        let base_url = base_url.ok_or_else(|| Error::config(format!("{what}.base_url is required for http")))?;
        let api_key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| Error::config(format!("{API_KEY_ENV} must be set for the http {what}")))?;
        Ok(HttpSettings {
            base_url: base_url.to_string(),
            api_key: Some(api_key),
            timeout: Duration::from_secs_f64(self.backend.timeout_s),
            retries: self.backend.retries,
            backoff: Duration::from_millis(self.backend.backoff_ms),
            max_inflight: self.backend.max_inflight,
        })
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>> {
        match self.embedding.kind {
            EmbeddingKind::Hash => Ok(Arc::new(HashEmbedder::new(self.embedding.dim))),
            EmbeddingKind::Http => {
                let url = self.embedding.base_url.as_deref().or(self.backend.base_url.as_deref());
                let settings = self.http_settings(url, "embedding")?;
                let model = self
                    .embedding
                    .model_id
                    .clone()
                    .ok_or_else(|| Error::config("embedding.model_id is required for http"))?;
                Ok(Arc::new(HttpEmbedder::new(settings, model, self.embedding.dim)?))
            }
        }
    }

    /// Build the configured backend; any misconfiguration surfaces here.
    pub fn backend(&self) -> Result<Backend> {
        match self.backend.kind {
            BackendKind::Mock => {
                let mock = match &self.backend.fixture {
                    Some(p) => {
                        let p = self.resolve(p);
                        mock_from_fixture(&p).map_err(|e| Error::config(format!("mock fixture: {e}")))?
                    }
                    None => MockBackend::default(),
                };
                Ok(Backend::Mock(
                    mock.with_prompt_delay(self.backend.delay_ms_per_prompt_token).realtime(self.backend.realtime),
                ))
            }
            BackendKind::Http => {
                let settings = self.http_settings(self.backend.base_url.as_deref(), "backend")?;
                Ok(Backend::Http(HttpBackend::new(settings)?))
            }
        }
    }
}

/// The concrete backend selected by configuration.
#[derive(Debug)]
pub enum Backend {
    Mock(MockBackend),
    Http(HttpBackend),
}

impl Backend {
    /// Scripted timings only: runs can skip wall-clock measurement.
    pub fn is_virtual_time(&self) -> bool {
        matches!(self, Backend::Mock(m) if !m.is_realtime())
    }

    pub fn as_completer(&self) -> &dyn crossflow_core::Completer {
        match self {
            Backend::Mock(m) => m,
            Backend::Http(h) => h,
        }
    }
}
