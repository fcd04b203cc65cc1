use super::hash::{fnv1a, mix64, seeded};
use super::{BackendError, Embedder, EmbeddingVector};

/// Signed feature hashing of lower-cased word unigrams and bigrams.
#[derive(Debug, Clone)]
pub struct FeatureHashEmbedder {
    dim: usize,
    seed: u64,
}

impl FeatureHashEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        FeatureHashEmbedder { dim, seed }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn add_feature(&self, values: &mut [f64], feature: &[u8]) {
        let h = mix64(fnv1a(seeded(self.seed), feature));
        let slot = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        values[slot] += sign;
    }
}

impl Default for FeatureHashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM, 0)
    }
}

impl Embedder for FeatureHashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::InvalidRequest("cannot embed empty text".into()));
        }
        let words: Vec<String> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect();
        let mut values = vec![0.0; self.dim];
        for w in &words {
            self.add_feature(&mut values, w.as_bytes());
        }
        for pair in words.windows(2) {
            let bigram = format!("{}\u{1f}{}", pair[0], pair[1]);
            self.add_feature(&mut values, bigram.as_bytes());
        }
        if words.is_empty() {
            // punctuation-only text: hash the raw string
            self.add_feature(&mut values, text.as_bytes());
        }
        EmbeddingVector::new(values)
    }
}
