//! Anchor (predefined task) set construction.
//!
//! Anchors are real dataset examples with non-empty answers. They are chosen
//! either by seeded uniform sampling or by K-Means over embeddings, taking the
//! nearest real example to each centroid.

pub mod kmeans;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use kmeans::{KMeansConfig, KMeansResult};

use crate::backend::{BackendError, Embedder};
use crate::dataset::{Dataset, DatasetError, ExampleId, Flag, InstructionExample, PromptTemplate, Role};
use crate::pool::parallel_map;
use crate::{ErrorKind, Fingerprint};

#[derive(Debug, Error)]
pub enum AnchorError {
    #[error("anchor count must be positive")]
    ZeroAnchors,
    #[error("requested {requested} anchors but only {eligible} examples have non-empty answers")]
    PoolTooSmall { requested: usize, eligible: usize },
    #[error("requested {k} clusters but only {distinct} distinct embeddings")]
    TooFewDistinct { k: usize, distinct: usize },
    #[error("embedding failed: {0}")]
    Embed(#[from] BackendError),
    #[error(transparent)]
    Render(#[from] DatasetError),
    #[error("{path}: {reason}")]
    File { path: PathBuf, reason: String },
}

impl AnchorError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            AnchorError::Embed(e) => e.kind(),
            AnchorError::Render(e) => e.kind(),
            AnchorError::ZeroAnchors => ErrorKind::Config,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorTask {
    pub anchor_id: usize,
    /// Rendered query text.
    pub task_text: String,
    /// Ground-truth answer; never empty.
    pub answer_text: String,
    pub source_example_id: ExampleId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Random,
    Kmeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Construction {
    pub method: Method,
    pub seed: u64,
    pub parameters: serde_json::Value,
}

/// The frozen, ordered anchor list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    #[serde(flatten)]
    construction: Construction,
    m: usize,
    fingerprint: Fingerprint,
    anchors: Vec<AnchorTask>,
}

impl AnchorSet {
    pub fn new(anchors: Vec<AnchorTask>, construction: Construction) -> Result<Self, AnchorError> {
        if anchors.is_empty() {
            return Err(AnchorError::ZeroAnchors);
        }
        let fingerprint = Self::contents_fingerprint(&anchors);
        let set = AnchorSet { construction, m: anchors.len(), fingerprint, anchors };
        set.validate().map_err(|reason| AnchorError::File { path: PathBuf::new(), reason })?;
        Ok(set)
    }

    fn contents_fingerprint(anchors: &[AnchorTask]) -> Fingerprint {
        Fingerprint::of(anchors)
    }

    fn validate(&self) -> Result<(), String> {
        if self.m != self.anchors.len() {
            return Err(format!("m = {} but {} anchors listed", self.m, self.anchors.len()));
        }
        let mut ids = HashSet::new();
        for a in &self.anchors {
            if !ids.insert(a.anchor_id) {
                return Err(format!("duplicate anchor_id {}", a.anchor_id));
            }
            if a.answer_text.trim().is_empty() {
                return Err(format!("anchor {} has an empty answer", a.anchor_id));
            }
        }
        if Self::contents_fingerprint(&self.anchors) != self.fingerprint {
            return Err("fingerprint does not match anchor contents".into());
        }
        Ok(())
    }

    pub fn anchors(&self) -> &[AnchorTask] {
        &self.anchors
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn fingerprint(&self) -> &Fingerprint {
        &self.fingerprint
    }

    pub fn construction(&self) -> &Construction {
        &self.construction
    }

    pub fn contains_source(&self, id: &ExampleId) -> bool {
        self.anchors.iter().any(|a| &a.source_example_id == id)
    }

    pub fn save(&self, path: &Path) -> Result<(), AnchorError> {
        let text = serde_json::to_string_pretty(self).expect("anchor set serializes");
        fs::write(path, text + "\n")
            .map_err(|e| AnchorError::File { path: path.to_path_buf(), reason: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, AnchorError> {
        let err = |reason: String| AnchorError::File { path: path.to_path_buf(), reason };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let set: AnchorSet = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        set.validate().map_err(err)?;
        Ok(set)
    }
}

fn eligible(dataset: &Dataset) -> Vec<&InstructionExample> {
    dataset.examples().iter().filter(|e| !e.has_flag(Flag::EmptyOutput)).collect()
}

fn to_anchors<'a>(
    picked: impl IntoIterator<Item = &'a InstructionExample>,
    template: &PromptTemplate,
) -> Result<Vec<AnchorTask>, AnchorError> {
    picked
        .into_iter()
        .enumerate()
        .map(|(i, ex)| {
            Ok(AnchorTask {
                anchor_id: i,
                task_text: template.render(ex, Role::Query)?,
                answer_text: ex.answer.clone(),
                source_example_id: ex.id.clone(),
            })
        })
        .collect()
}

fn check_pool(requested: usize, eligible: usize) -> Result<(), AnchorError> {
    if requested == 0 {
        return Err(AnchorError::ZeroAnchors);
    }
    if requested > eligible {
        return Err(AnchorError::PoolTooSmall { requested, eligible });
    }
    Ok(())
}

/// Uniform sample of `m` examples without replacement, in sampling order.
pub fn sample_random(
    dataset: &Dataset,
    m: usize,
    seed: u64,
    template: &PromptTemplate,
) -> Result<AnchorSet, AnchorError> {
    let pool = eligible(dataset);
    check_pool(m, pool.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, pool.len(), m).into_iter().map(|i| pool[i]);
    let anchors = to_anchors(picked, template)?;
    AnchorSet::new(
        anchors,
        Construction { method: Method::Random, seed, parameters: json!({ "m": m }) },
    )
}

/// Text an example contributes to clustering: its raw fields, without
/// template boilerplate.
pub fn embedding_text(example: &InstructionExample) -> String {
    let mut s = example.instruction.clone();
    if let Some(input) = example.input.as_deref().filter(|i| !i.trim().is_empty()) {
        s.push('\n');
        s.push_str(input);
    }
    s.push('\n');
    s.push_str(&example.answer);
    s
}

fn embed_all(
    texts: &[String],
    embedder: &dyn Embedder,
    parallelism: usize,
) -> Result<Vec<Vec<f64>>, BackendError> {
    let out = parallel_map(texts, parallelism, |t| embedder.embed(t).map(|v| v.into_values()))?;
    let dim = out.first().map_or(0, Vec::len);
    if let Some(bad) = out.iter().find(|v| v.len() != dim) {
        return Err(BackendError::DimensionDrift { expected: dim, got: bad.len() });
    }
    Ok(out)
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansAnchorOptions {
    #[serde(flatten)]
    pub kmeans: KMeansConfig,
    /// Concurrent embedding requests.
    pub parallelism: usize,
}

impl Default for KMeansAnchorOptions {
    fn default() -> Self {
        KMeansAnchorOptions { kmeans: KMeansConfig::default(), parallelism: 1 }
    }
}

/// Anchors built by clustering
#[derive(Debug, Clone)]
pub struct KMeansAnchors {
    pub set: AnchorSet,
    pub clustering: KMeansResult,
}

/// Cluster L2-normalised embeddings of all eligible examples into `k`
/// groups and take, for each centroid in order, the nearest unused example.
pub fn sample_kmeans(
    dataset: &Dataset,
    k: usize,
    seed: u64,
    embedder: &dyn Embedder,
    template: &PromptTemplate,
    options: &KMeansAnchorOptions,
) -> Result<KMeansAnchors, AnchorError> {
    let pool = eligible(dataset);
    check_pool(k, pool.len())?;
    let texts: Vec<String> = pool.iter().map(|e| embedding_text(e)).collect();
    let mut points = embed_all(&texts, embedder, options.parallelism)?;
    points.iter_mut().for_each(|p| l2_normalize(p));

    let distinct = {
        let mut keys: Vec<Vec<u64>> = points.iter().map(|p| p.iter().map(|x| x.to_bits()).collect()).collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    };
    if distinct < k {
        return Err(AnchorError::TooFewDistinct { k, distinct });
    }

    let clustering = kmeans::kmeans(&points, k, seed, &options.kmeans);
    let mut used = vec![false; points.len()];
    let mut picked = Vec::with_capacity(k);
    for c in &clustering.centroids {
        let best = (0..points.len())
            .filter(|&i| !used[i])
            .min_by(|&a, &b| {
                kmeans::squared_distance(&points[a], c)
                    .total_cmp(&kmeans::squared_distance(&points[b], c))
                    .then(a.cmp(&b))
            })
            .expect("k <= pool size leaves an unused example");
        used[best] = true;
        picked.push(pool[best]);
    }

    let anchors = to_anchors(picked, template)?;
    let set = AnchorSet::new(
        anchors,
        Construction {
            method: Method::Kmeans,
            seed,
            parameters: json!({
                "k": k,
                "tolerance": options.kmeans.tolerance,
                "max_iter": options.kmeans.max_iter,
                "iterations": clustering.iterations,
                "converged": clustering.converged,
            }),
        },
    )?;
    Ok(KMeansAnchors { set, clustering })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FeatureHashEmbedder, TableBackend};

    fn dataset(n: usize) -> Dataset {
        let examples = (0..n)
            .map(|i| {
                let answer = if i % 7 == 3 { String::new() } else { format!("answer number {i}") };
                InstructionExample::new(ExampleId::from(i), format!("instruction {i}"), None, answer)
            })
            .collect();
        Dataset::from_examples(examples).unwrap()
    }

    #[test]
    fn random_full_pool_is_permutation() {
        let ds = dataset(20);
        let pool = eligible(&ds).len();
        let set = sample_random(&ds, pool, 1, &PromptTemplate::alpaca()).unwrap();
        let mut ids: Vec<_> = set.anchors().iter().map(|a| a.source_example_id.clone()).collect();
        ids.sort();
        let mut expected: Vec<_> = eligible(&ds).iter().map(|e| e.id.clone()).collect();
        expected.sort();
        assert_eq!(ids, expected);
        assert!(set.anchors().iter().all(|a| !a.answer_text.is_empty()));
    }

    #[test]
    fn random_is_seeded() {
        let ds = dataset(1000);
        let t = PromptTemplate::alpaca();
        let a = sample_random(&ds, 100, 1, &t).unwrap();
        assert_eq!(a.fingerprint(), sample_random(&ds, 100, 1, &t).unwrap().fingerprint());
        assert_ne!(a.fingerprint(), sample_random(&ds, 100, 2, &t).unwrap().fingerprint());
    }

    #[test]
    fn pool_errors() {
        let ds = dataset(7);
        let t = PromptTemplate::alpaca();
        assert!(matches!(sample_random(&ds, 7, 0, &t), Err(AnchorError::PoolTooSmall { requested: 7, eligible: 6 })));
        assert!(matches!(sample_random(&ds, 0, 0, &t), Err(AnchorError::ZeroAnchors)));
    }

    #[test]
    fn kmeans_k1_picks_example_nearest_global_centroid() {
        let mut table = TableBackend::new();
        let pts = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.2]];
        let examples: Vec<_> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let ex = InstructionExample::new(ExampleId::from(i), format!("i{i}"), None, "a");
                table.insert_embedding(embedding_text(&ex), p.to_vec());
                ex
            })
            .collect();
        let ds = Dataset::from_examples(examples).unwrap();
        let r = sample_kmeans(&ds, 1, 0, &table, &PromptTemplate::alpaca(), &Default::default()).unwrap();
        // normalised points' mean lies on the diagonal; [1,1] normalised is on it
        assert_eq!(r.set.anchors()[0].source_example_id, ExampleId::from(2));
    }

    #[test]
    fn kmeans_rejects_too_few_distinct() {
        let mut table = TableBackend::new();
        let examples: Vec<_> = (0..4)
            .map(|i| {
                let ex = InstructionExample::new(ExampleId::from(i), format!("i{i}"), None, "a");
                table.insert_embedding(embedding_text(&ex), vec![1.0, 1.0]);
                ex
            })
            .collect();
        let ds = Dataset::from_examples(examples).unwrap();
        let err = sample_kmeans(&ds, 2, 0, &table, &PromptTemplate::alpaca(), &Default::default()).unwrap_err();
        assert!(matches!(err, AnchorError::TooFewDistinct { k: 2, distinct: 1 }));
    }

    #[test]
    fn kmeans_anchors_unique_and_deterministic() {
        let ds = dataset(60);
        let e = FeatureHashEmbedder::default();
        let t = PromptTemplate::alpaca();
        let opts = KMeansAnchorOptions { parallelism: 4, ..Default::default() };
        let a = sample_kmeans(&ds, 10, 3, &e, &t, &opts).unwrap();
        let b = sample_kmeans(&ds, 10, 3, &e, &t, &Default::default()).unwrap();
        assert_eq!(a.set, b.set);
        let ids: HashSet<_> = a.set.anchors().iter().map(|x| &x.source_example_id).collect();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn save_load_and_tamper_detection() {
        let ds = dataset(10);
        let set = sample_random(&ds, 3, 0, &PromptTemplate::alpaca()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("anchors.json");
        set.save(&path).unwrap();
        assert_eq!(AnchorSet::load(&path).unwrap(), set);

        let text = fs::read_to_string(&path).unwrap().replace("answer number", "answer NUMBER");
        fs::write(&path, text).unwrap();
        assert!(AnchorSet::load(&path).is_err());
    }
}
