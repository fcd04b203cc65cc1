//! Explicit request → span lookup, for unit tests and fixtures.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::tokenize::count_tokens;
use super::{
    Backend, BackendError, Embedder, EmbeddingVector, ScoreRequest, ScoredSpan, DEFAULT_CONTEXT_BUDGET,
};
use crate::Fingerprint;

/// On-disk form of a [`TableBackend`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TableFile {
    #[serde(default)]
    pub context_budget: Option<usize>,
    /// Exact (prefix, target) entries.
    #[serde(default)]
    pub spans: Vec<SpanEntry>,
    /// Fallback entries matched on target alone.
    #[serde(default)]
    pub by_target: Vec<TargetEntry>,
    #[serde(default)]
    pub embeddings: Vec<EmbeddingEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpanEntry {
    pub prefix: String,
    pub target: String,
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetEntry {
    pub target: String,
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub text: String,
    pub values: Vec<f64>,
}

/// Token counts for the context budget use the offline tokenizer.
#[derive(Debug, Clone, Default)]
pub struct TableBackend {
    exact: HashMap<(String, String), Vec<f64>>,
    by_target: HashMap<String, Vec<f64>>,
    embeddings: HashMap<String, Vec<f64>>,
    context_budget: Option<usize>,
}

impl TableBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_context_budget(mut self, budget: usize) -> Self {
        self.context_budget = Some(budget);
        self
    }

    pub fn insert(&mut self, prefix: impl Into<String>, target: impl Into<String>, logprobs: Vec<f64>) {
        self.exact.insert((prefix.into(), target.into()), logprobs);
    }

    pub fn insert_target(&mut self, target: impl Into<String>, logprobs: Vec<f64>) {
        self.by_target.insert(target.into(), logprobs);
    }

    pub fn insert_embedding(&mut self, text: impl Into<String>, values: Vec<f64>) {
        self.embeddings.insert(text.into(), values);
    }

    pub fn from_file(file: TableFile) -> Self {
        let mut t = TableBackend { context_budget: file.context_budget, ..Default::default() };
        for e in file.spans {
            t.insert(e.prefix, e.target, e.logprobs);
        }
        for e in file.by_target {
            t.insert_target(e.target, e.logprobs);
        }
        for e in file.embeddings {
            t.insert_embedding(e.text, e.values);
        }
        t
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let file: TableFile = serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::from_file(file))
    }

    fn contents_fingerprint(&self) -> Fingerprint {
        let mut exact: Vec<_> = self.exact.iter().collect();
        exact.sort_by(|a, b| a.0.cmp(b.0));
        let mut by_target: Vec<_> = self.by_target.iter().collect();
        by_target.sort_by(|a, b| a.0.cmp(b.0));
        let mut emb: Vec<_> = self.embeddings.iter().collect();
        emb.sort_by(|a, b| a.0.cmp(b.0));
        Fingerprint::of(&(exact, by_target, emb))
    }
}

impl Embedder for TableBackend {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let values = self
            .embeddings
            .get(text)
            .ok_or_else(|| BackendError::InvalidRequest(format!("no table embedding for {text:?}")))?;
        EmbeddingVector::new(values.clone())
    }
}

impl Backend for TableBackend {
    fn descriptor(&self) -> serde_json::Value {
        json!({
            "kind": "table",
            "contents": self.contents_fingerprint(),
            "context_budget": self.context_budget(),
        })
    }

    fn context_budget(&self) -> usize {
        self.context_budget.unwrap_or(DEFAULT_CONTEXT_BUDGET)
    }

    fn count_tokens(&self, text: &str) -> Option<usize> {
        Some(count_tokens(text))
    }

    fn score_span(&self, request: &ScoreRequest) -> Result<ScoredSpan, BackendError> {
        let tokens = count_tokens(&request.joint());
        if tokens > self.context_budget() {
            return Err(BackendError::ContextOverflow { tokens: Some(tokens), budget: self.context_budget() });
        }
        let key = (request.prefix.clone(), request.target.clone());
        let logprobs = self
            .exact
            .get(&key)
            .or_else(|| self.by_target.get(&request.target))
            .ok_or_else(|| {
                BackendError::InvalidRequest(format!("no table entry for target {:?}", request.target))
            })?;
        ScoredSpan::new(logprobs.clone(), count_tokens(&request.prefix))
    }
}
