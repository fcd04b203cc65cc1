//! Client for OpenAI-compatible completions servers that can echo the prompt
//! with per-token logprobs and text offsets.
//!
//! The whole `prefix + target` text is sent as the prompt with zero new
//! tokens; the response must carry one logprob and one text offset per
//! prompt token. Response field locations are JSON pointers so that
//! non-standard servers can be accommodated.

use std::sync::OnceLock;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::retry::Attempt;
use super::{
    align_span, Backend, BackendError, Embedder, EmbeddingVector, RetryPolicy, ScoreRequest, ScoredSpan,
    DEFAULT_CONTEXT_BUDGET,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OffsetUnit {
    /// Unicode scalar values (Python string indices).
    #[default]
    Chars,
    Bytes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub completions_path: String,
    pub embeddings_path: String,
    /// Optional endpoint returning a token count for a prompt; enables
    /// overflow rejection before scoring.
    pub tokenize_path: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub context_budget: usize,
    pub retry: RetryPolicy,
    pub token_logprobs_pointer: String,
    pub text_offset_pointer: String,
    pub embedding_pointer: String,
    pub tokenize_count_pointer: String,
    pub offset_unit: OffsetUnit,
    /// Merged into every completions request body.
    pub extra_body: Value,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "http://127.0.0.1:8000".into(),
            model: String::new(),
            completions_path: "/v1/completions".into(),
            embeddings_path: "/v1/embeddings".into(),
            tokenize_path: None,
            api_key_env: None,
            timeout_secs: 120,
            context_budget: DEFAULT_CONTEXT_BUDGET,
            retry: RetryPolicy::default(),
            token_logprobs_pointer: "/choices/0/logprobs/token_logprobs".into(),
            text_offset_pointer: "/choices/0/logprobs/text_offset".into(),
            embedding_pointer: "/data/0/embedding".into(),
            tokenize_count_pointer: "/count".into(),
            offset_unit: OffsetUnit::Chars,
            extra_body: json!({"max_tokens": 0, "echo": true, "logprobs": 1, "temperature": 0}),
        }
    }
}

#[derive(Debug)]
pub struct HttpBackend {
    config: HttpConfig,
    client: Client,
    api_key: Option<String>,
    embedding_dim: OnceLock<usize>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        if !config.extra_body.is_object() {
            return Err(BackendError::Config("extra_body must be a JSON object".into()));
        }
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpBackend { config, client, api_key, embedding_dim: OnceLock::new() })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let url = self.url(path);
        let outcome = self.config.retry.run(&format!("POST {url}"), || {
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => return Attempt::Transient(format!("transport error: {e}")),
            };
            let status = resp.status();
            let text = match resp.text() {
                Ok(t) => t,
                Err(e) => return Attempt::Transient(format!("reading body: {e}")),
            };
            if status.is_server_error() {
                return Attempt::Transient(format!("HTTP {status}: {}", snippet(&text)));
            }
            if !status.is_success() {
                let lower = text.to_lowercase();
                if status.as_u16() == 400 && (lower.contains("context") || lower.contains("maximum")) {
                    return Attempt::Fatal(BackendError::ContextOverflow {
                        tokens: None,
                        budget: self.config.context_budget,
                    });
                }
                return Attempt::Fatal(BackendError::Rejected(format!("HTTP {status}: {}", snippet(&text))));
            }
            match serde_json::from_str(&text) {
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fatal(BackendError::Rejected(format!("invalid JSON response: {e}"))),
            }
        });
        match outcome {
            Ok(result) => result,
            Err((attempts, last)) => Err(BackendError::Unavailable { attempts, last }),
        }
    }

    fn remote_token_count(&self, path: &str, text: &str) -> Result<usize, BackendError> {
        let resp = self.post(path, &json!({"model": self.config.model, "prompt": text}))?;
        resp.pointer(&self.config.tokenize_count_pointer)
            .and_then(Value::as_u64)
            .map(|n| n as usize)
            .ok_or_else(|| BackendError::Rejected("tokenize response has no count".into()))
    }
}

fn snippet(s: &str) -> &str {
    let end = s.char_indices().nth(200).map_or(s.len(), |(i, _)| i);
    &s[..end]
}

/// Convert character offsets into byte offsets of `text`. Offsets past the
/// end map to `text.len()` plus the excess.
fn char_to_byte_offsets(text: &str, offsets: &[usize]) -> Vec<usize> {
    let boundaries: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
    offsets
        .iter()
        .map(|&o| boundaries.get(o).copied().unwrap_or_else(|| text.len() + (o - boundaries.len())))
        .collect()
}

/// Extract target logprobs from an echoed completions response.
pub(crate) fn parse_echo_response(
    response: &Value,
    config: &HttpConfig,
    request: &ScoreRequest,
) -> Result<ScoredSpan, BackendError> {
    let text = request.joint();
    let offsets: Vec<usize> = response
        .pointer(&config.text_offset_pointer)
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::SpanAlignment(format!("response has no {}", config.text_offset_pointer)))?
        .iter()
        .map(|v| v.as_u64().map(|n| n as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| BackendError::SpanAlignment("non-integer text offset".into()))?;
    let logprobs: Vec<Option<f64>> = response
        .pointer(&config.token_logprobs_pointer)
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::SpanAlignment(format!("response has no {}", config.token_logprobs_pointer)))?
        .iter()
        .map(Value::as_f64)
        .collect();
    if offsets.len() != logprobs.len() {
        return Err(BackendError::SpanAlignment(format!(
            "{} offsets for {} logprobs",
            offsets.len(),
            logprobs.len()
        )));
    }
    let starts = match config.offset_unit {
        OffsetUnit::Bytes => offsets,
        OffsetUnit::Chars => char_to_byte_offsets(&text, &offsets),
    };
    let prompt_tokens = starts.iter().take_while(|&&s| s < text.len()).count();
    if prompt_tokens > config.context_budget {
        return Err(BackendError::ContextOverflow { tokens: Some(prompt_tokens), budget: config.context_budget });
    }
    let range = align_span(&starts, text.len(), request.prefix.len())?;
    let target: Vec<f64> = logprobs[range.clone()]
        .iter()
        .enumerate()
        .map(|(i, lp)| {
            lp.ok_or_else(|| {
                BackendError::SpanAlignment(format!("target token {} has no logprob", range.start + i))
            })
        })
        .collect::<Result<_, _>>()?;
    ScoredSpan::new(target, range.start)
}

impl Embedder for HttpBackend {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        if text.is_empty() {
            return Err(BackendError::InvalidRequest("cannot embed empty text".into()));
        }
        let resp = self.post(&self.config.embeddings_path, &json!({"model": self.config.model, "input": text}))?;
        let values: Vec<f64> = resp
            .pointer(&self.config.embedding_pointer)
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(Value::as_f64).collect())
            .ok_or_else(|| BackendError::Rejected(format!("response has no {}", self.config.embedding_pointer)))?;
        let v = EmbeddingVector::new(values)?;
        let expected = *self.embedding_dim.get_or_init(|| v.dim());
        if v.dim() != expected {
            return Err(BackendError::DimensionDrift { expected, got: v.dim() });
        }
        Ok(v)
    }
}

impl Backend for HttpBackend {
    fn descriptor(&self) -> Value {
        let c = &self.config;
        json!({
            "kind": "http",
            "base_url": c.base_url,
            "model": c.model,
            "completions_path": c.completions_path,
            "context_budget": c.context_budget,
            "offset_unit": c.offset_unit,
            "extra_body": c.extra_body,
        })
    }

    fn context_budget(&self) -> usize {
        self.config.context_budget
    }

    fn score_span(&self, request: &ScoreRequest) -> Result<ScoredSpan, BackendError> {
        let text = request.joint();
        if let Some(path) = &self.config.tokenize_path {
            let n = self.remote_token_count(path, &text)?;
            if n > self.config.context_budget {
                return Err(BackendError::ContextOverflow { tokens: Some(n), budget: self.config.context_budget });
            }
        }
        let mut body = self.config.extra_body.clone();
        let obj = body.as_object_mut().expect("validated in constructor");
        obj.insert("model".into(), Value::String(self.config.model.clone()));
        obj.insert("prompt".into(), Value::String(text));
        let resp = self.post(&self.config.completions_path, &body)?;
        parse_echo_response(&resp, &self.config, request)
    }
}
