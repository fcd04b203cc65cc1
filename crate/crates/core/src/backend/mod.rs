//! Log-probability and embedding backends.
//!
//! A backend scores a target continuation given a prefix and returns one
//! natural-log probability per target token. Three implementations ship:
//! an OpenAI-compatible HTTP client ([`HttpBackend`]), a seeded hash mock
//! ([`HashMockBackend`]) and an explicit lookup table ([`TableBackend`]).

mod embed;
pub mod hash;
mod http;
mod mock;
mod retry;
mod table;
pub mod tokenize;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::FeatureHashEmbedder;
pub use http::{HttpBackend, HttpConfig, OffsetUnit};
pub use mock::HashMockBackend;
pub use retry::RetryPolicy;
pub use table::{TableBackend, TableFile};

use crate::{ErrorKind, Fingerprint};

pub const DEFAULT_CONTEXT_BUDGET: usize = 2048;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("context overflow: {} tokens exceed budget {budget}", tokens.map_or("?".to_string(), |t| t.to_string()))]
    ContextOverflow { tokens: Option<usize>, budget: usize },
    #[error("backend unavailable after {attempts} attempt(s): {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("span alignment failure: {0}")]
    SpanAlignment(String),
    #[error("embedding dimension drift: expected {expected}, got {got}")]
    DimensionDrift { expected: usize, got: usize },
    #[error("backend rejected request: {0}")]
    Rejected(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{0} is not supported by this backend")]
    Unsupported(&'static str),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            BackendError::Config(_) => ErrorKind::Config,
            BackendError::InvalidRequest(_) => ErrorKind::Data,
            _ => ErrorKind::Backend,
        }
    }
}

/// Prefix (conditioning context) and target continuation to score.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prefix: String,
    pub target: String,
}

impl ScoreRequest {
    pub fn new(prefix: impl Into<String>, target: impl Into<String>) -> Result<Self, BackendError> {
        let target = target.into();
        if target.is_empty() {
            return Err(BackendError::InvalidRequest("target is empty".into()));
        }
        Ok(ScoreRequest { prefix: prefix.into(), target })
    }

    pub fn joint(&self) -> String {
        let mut s = String::with_capacity(self.prefix.len() + self.target.len());
        s.push_str(&self.prefix);
        s.push_str(&self.target);
        s
    }
}

/// Per-token log-probabilities of a target span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSpan {
    token_logprobs: Vec<f64>,
    prefix_token_count: usize,
}

impl ScoredSpan {
    pub fn new(token_logprobs: Vec<f64>, prefix_token_count: usize) -> Result<Self, BackendError> {
        if token_logprobs.is_empty() {
            return Err(BackendError::SpanAlignment("target span has no tokens".into()));
        }
        if let Some(bad) = token_logprobs.iter().find(|lp| !lp.is_finite() || **lp > 0.0) {
            return Err(BackendError::Rejected(format!("invalid token logprob {bad}")));
        }
        Ok(ScoredSpan { token_logprobs, prefix_token_count })
    }

    pub fn token_logprobs(&self) -> &[f64] {
        &self.token_logprobs
    }

    pub fn token_count(&self) -> usize {
        self.token_logprobs.len()
    }

    pub fn prefix_token_count(&self) -> usize {
        self.prefix_token_count
    }

    /// Length-normalised log-likelihood of the target.
    pub fn mean(&self) -> f64 {
        self.token_logprobs.iter().sum::<f64>() / self.token_logprobs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, BackendError> {
        if values.is_empty() {
            return Err(BackendError::Rejected("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::Rejected("non-finite embedding entry".into()));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Produces fixed-dimension vectors for clustering.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError>;
}

/// A model that can score target spans. Implementations must be pure
/// functions of (request, configuration): retries may change availability
/// but never values.
pub trait Backend: Embedder {
    /// Configuration that determines scores. Excludes credentials, timeouts
    /// and parallelism.
    fn descriptor(&self) -> serde_json::Value;

    fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(&self.descriptor())
    }

    /// Maximum combined prefix+target length in tokens.
    fn context_budget(&self) -> usize;

    /// Local token count, when the backend can compute one without scoring.
    fn count_tokens(&self, _text: &str) -> Option<usize> {
        None
    }

    fn score_span(&self, request: &ScoreRequest) -> Result<ScoredSpan, BackendError>;
}

/// Pick the tokens covering the target.
///
/// `starts` are token start offsets into the joint text (same unit as
/// `boundary` and `text_len`), one per token. Token `i` ends where token
/// `i+1` starts. Tokens starting at or after `text_len` (e.g. generated
/// continuations) are ignored. Any token extending past `boundary` belongs to
/// the target, including one straddling it.
pub fn align_span(starts: &[usize], text_len: usize, boundary: usize) -> Result<Range<usize>, BackendError> {
    if boundary >= text_len {
        return Err(BackendError::SpanAlignment("target is empty".into()));
    }
    let n = starts.iter().take_while(|&&s| s < text_len).count();
    if n == 0 {
        return Err(BackendError::SpanAlignment("no tokens returned".into()));
    }
    if starts[..n].windows(2).any(|w| w[1] < w[0]) {
        return Err(BackendError::SpanAlignment("token offsets are not monotone".into()));
    }
    let end_of = |i: usize| if i + 1 < n { starts[i + 1] } else { text_len };
    let first = (0..n)
        .find(|&i| end_of(i) > boundary)
        .ok_or_else(|| BackendError::SpanAlignment("no token reaches the target".into()))?;
    if starts[first] > boundary {
        return Err(BackendError::SpanAlignment(format!(
            "target bytes {boundary}..{} not covered by any token",
            starts[first]
        )));
    }
    Ok(first..n)
}
