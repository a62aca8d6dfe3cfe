//! The three text agents (perception parser, value generator, value evaluator)
//! plus the embedding model, behind one front door.
//!
//! [`Gateway`] owns the precondition checks and output normalization; the
//! [`Backend`] behind it is either the deterministic [`MockBackend`] or the
//! chat-completion [`RemoteBackend`].

mod limiter;
pub(crate) mod mock;
pub mod prompts;
mod remote;
mod transport;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize_value_name;

pub use limiter::Limiter;
pub use mock::{mock_embedding, MockBackend, MockRules, MOCK_EMBEDDING_DIM};
pub use remote::{ChatResponder, RemoteBackend, RemoteRoles};
pub use transport::{HttpTransport, Transport, TransportError, API_KEY_ENV};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    #[default]
    Mock,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remote" => Ok(BackendKind::Remote),
            "mock" => Ok(BackendKind::Mock),
            other => Err(Error::Config(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub backend: BackendKind,
    /// Full URL of the chat-completion (or embeddings) endpoint.
    pub endpoint: Option<String>,
    pub model_name: String,
    pub max_concurrency: usize,
    pub max_retries: u32,
    /// Request timeout in seconds.
    pub timeout: f64,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    /// Base delay between retries, in milliseconds. Doubles per attempt.
    pub retry_backoff_ms: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            endpoint: None,
            model_name: "mock".to_string(),
            max_concurrency: 8,
            max_retries: 3,
            timeout: 60.0,
            temperature: None,
            top_p: None,
            retry_backoff_ms: 250,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_concurrency < 1 {
            return Err(Error::Config("max_concurrency must be at least 1".into()));
        }
        if !(self.timeout > 0.0) {
            return Err(Error::Config("timeout must be positive".into()));
        }
        if self.backend == BackendKind::Remote && self.endpoint.is_none() {
            return Err(Error::Config(format!(
                "remote agent `{}` needs an endpoint",
                self.model_name
            )));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relevance {
    Relevant,
    Irrelevant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Valence {
    Supports,
    Opposes,
}

/// Evaluator verdict for one (perception, value) pair. `valence` is present
/// exactly when the perception is relevant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValenceJudgment {
    relevance: Relevance,
    valence: Option<Valence>,
    confidence: f64,
}

impl ValenceJudgment {
    pub fn relevant(valence: Valence, confidence: f64) -> Self {
        Self {
            relevance: Relevance::Relevant,
            valence: Some(valence),
            confidence: confidence.clamp(0.0, 1.0),
        }
    }

    pub fn irrelevant(confidence: f64) -> Self {
        Self {
            relevance: Relevance::Irrelevant,
            valence: None,
            confidence: confidence.clamp(0.0, 1.0),
        }
    }

    pub fn relevance(&self) -> Relevance {
        self.relevance
    }

    pub fn valence(&self) -> Option<Valence> {
        self.valence
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn is_relevant(&self) -> bool {
        self.relevance == Relevance::Relevant
    }

    /// +1 for support, -1 for opposition, `None` when irrelevant.
    pub fn sign(&self) -> Option<f64> {
        match self.valence {
            Some(Valence::Supports) => Some(1.0),
            Some(Valence::Opposes) => Some(-1.0),
            None => None,
        }
    }
}

/// What a backend must provide. Inputs arrive already validated by [`Gateway`].
pub trait Backend: Send + Sync {
    fn parse_perceptions(&self, text: &str) -> Result<Vec<String>>;
    fn generate_values(&self, perception: &str) -> Result<Vec<String>>;
    fn evaluate_valence(&self, perception: &str, value: &str) -> Result<ValenceJudgment>;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
    fn generate_eliciting_prompt(&self, value: &str) -> Result<String>;
}

/// Thread-safe entry point to the agents. Embeddings are memoized.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    embed_cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            embed_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn mock(rules: MockRules) -> Self {
        Self::new(Arc::new(MockBackend::new(rules)))
    }

    pub fn parse_perceptions(&self, text: &str) -> Result<Vec<String>> {
        require_text("text", text)?;
        Ok(self
            .backend
            .parse_perceptions(text)?
            .into_iter()
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .collect())
    }

    /// Normalized value names, each with weight 1.
    pub fn generate_values(&self, perception: &str) -> Result<Vec<(String, u64)>> {
        require_text("perception", perception)?;
        Ok(self
            .backend
            .generate_values(perception)?
            .iter()
            .map(|v| normalize_value_name(v))
            .filter(|v| !v.is_empty())
            .map(|v| (v, 1))
            .collect())
    }

    pub fn evaluate_valence(&self, perception: &str, value: &str) -> Result<ValenceJudgment> {
        require_text("perception", perception)?;
        require_text("value", value)?;
        self.backend.evaluate_valence(perception, value)
    }

    /// Unit-norm embedding.
    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        require_text("text", text)?;
        if let Some(v) = self.embed_cache.lock().unwrap().get(text) {
            return Ok(v.clone());
        }
        let mut v = self.backend.embed(text)?;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::numerical(format!("degenerate embedding for `{text}`")));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        self.embed_cache
            .lock()
            .unwrap()
            .insert(text.to_string(), v.clone());
        Ok(v)
    }

    pub fn generate_eliciting_prompt(&self, value: &str) -> Result<String> {
        require_text("value", value)?;
        self.backend.generate_eliciting_prompt(value)
    }
}

fn require_text(what: &str, text: &str) -> Result<()> {
    if text.trim().is_empty() {
        Err(Error::invalid(format!("{what} must be non-empty")))
    } else {
        Ok(())
    }
}

/// Cosine similarity of two equal-length vectors; 0 when either is all zeros.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
