//! Seeded hash-mock backend.
//!
//! The log-probability of a token is a deterministic function of the seed,
//! the previous (up to) four tokens and the token itself, mapped into
//! `[-3.0, -0.01]`. Stable across processes and platforms.
//!
//! With the default window a demonstration never reaches an anchor's answer
//! tokens, so one-shot and zero-shot scores tie. A wider window
//! ([`HashMockBackend::with_context_tokens`]) lets demonstrations matter.

use serde_json::json;

use super::hash::{fnv1a, mix64, seeded, unit_interval};
use super::tokenize::token_spans;
use super::{
    align_span, Backend, BackendError, Embedder, EmbeddingVector, FeatureHashEmbedder, ScoreRequest,
    ScoredSpan, DEFAULT_CONTEXT_BUDGET,
};

pub const MOCK_CONTEXT_TOKENS: usize = 4;
const LOGPROB_MAX: f64 = -0.01;
const LOGPROB_MIN: f64 = -3.0;

#[derive(Debug, Clone)]
pub struct HashMockBackend {
    seed: u64,
    context_tokens: usize,
    context_budget: usize,
    embedder: FeatureHashEmbedder,
}

impl HashMockBackend {
    pub fn new(seed: u64) -> Self {
        HashMockBackend {
            seed,
            context_tokens: MOCK_CONTEXT_TOKENS,
            context_budget: DEFAULT_CONTEXT_BUDGET,
            embedder: FeatureHashEmbedder::new(64, seed),
        }
    }

    pub fn with_context_budget(mut self, budget: usize) -> Self {
        self.context_budget = budget;
        self
    }

    /// Number of preceding tokens the hash sees (default 4).
    pub fn with_context_tokens(mut self, n: usize) -> Self {
        self.context_tokens = n;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Logprob of `token` after `context` (only the last `context_tokens` entries are used).
    pub fn token_logprob(&self, context: &[&str], token: &str) -> f64 {
        let tail = &context[context.len().saturating_sub(self.context_tokens)..];
        let mut h = seeded(self.seed);
        for t in tail {
            h = fnv1a(h, t.as_bytes());
            h = fnv1a(h, &[0xff]);
        }
        h = fnv1a(h, &[0xfe]);
        h = fnv1a(h, token.as_bytes());
        LOGPROB_MAX - unit_interval(mix64(h)) * (LOGPROB_MAX - LOGPROB_MIN)
    }
}

impl Embedder for HashMockBackend {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        self.embedder.embed(text)
    }
}

impl Backend for HashMockBackend {
    fn descriptor(&self) -> serde_json::Value {
        json!({
            "kind": "hash-mock",
            "seed": self.seed,
            "context_tokens": self.context_tokens,
            "context_budget": self.context_budget,
            "embedding_dim": self.embedder.dim(),
        })
    }

    fn context_budget(&self) -> usize {
        self.context_budget
    }

    fn count_tokens(&self, text: &str) -> Option<usize> {
        Some(token_spans(text).len())
    }

    fn score_span(&self, request: &ScoreRequest) -> Result<ScoredSpan, BackendError> {
        let text = request.joint();
        let spans = token_spans(&text);
        if spans.len() > self.context_budget {
            return Err(BackendError::ContextOverflow {
                tokens: Some(spans.len()),
                budget: self.context_budget,
            });
        }
        let starts: Vec<usize> = spans.iter().map(|s| s.0).collect();
        let range = align_span(&starts, text.len(), request.prefix.len())?;
        let tokens: Vec<&str> = spans.iter().map(|&(a, b)| &text[a..b]).collect();
        let logprobs = range
            .clone()
            .map(|i| self.token_logprob(&tokens[..i], tokens[i]))
            .collect();
        ScoredSpan::new(logprobs, range.start)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_request_same_span() {
        let b = HashMockBackend::new(3);
        let r = ScoreRequest::new("Q: what?\nA:", " yes it is").unwrap();
        let s1 = b.score_span(&r).unwrap();
        assert_eq!(s1, b.score_span(&r).unwrap());
        assert_eq!(s1.token_count(), 3);
        assert!(s1.token_logprobs().iter().all(|&l| (LOGPROB_MIN..=LOGPROB_MAX).contains(&l)));
    }

    #[test]
    fn wider_window_sees_the_prefix() {
        let r1 = ScoreRequest::new("alpha one two three four", " five").unwrap();
        let r2 = ScoreRequest::new("beta one two three four", " five").unwrap();
        let narrow = HashMockBackend::new(0);
        assert_eq!(narrow.score_span(&r1).unwrap(), narrow.score_span(&r2).unwrap());
        let wide = HashMockBackend::new(0).with_context_tokens(5);
        assert_ne!(wide.score_span(&r1).unwrap(), wide.score_span(&r2).unwrap());
        assert_ne!(narrow.fingerprint(), wide.fingerprint());
    }

    #[test]
    fn seed_changes_scores() {
        let r = ScoreRequest::new("abc", " def").unwrap();
        let a = HashMockBackend::new(1).score_span(&r).unwrap();
        let b = HashMockBackend::new(2).score_span(&r).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn overflow_rejected_before_scoring() {
        let b = HashMockBackend::new(0).with_context_budget(3);
        let err = b.score_span(&ScoreRequest::new("one two three", " four").unwrap()).unwrap_err();
        assert!(matches!(err, BackendError::ContextOverflow { tokens: Some(4), budget: 3 }));
    }

    #[test]
    fn context_window_is_four_tokens() {
        let b = HashMockBackend::new(9);
        let x = b.token_logprob(&["z", "a", "b", "c", "d"], "e");
        let y = b.token_logprob(&["q", "a", "b", "c", "d"], "e");
        assert_eq!(x, y);
        assert_ne!(x, b.token_logprob(&["a", "b", "c", "x"], "e"));
    }
}
