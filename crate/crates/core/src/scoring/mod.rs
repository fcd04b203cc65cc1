//! Zero-shot profiles, one-shot rows and golden scores.
//!
//! For anchor `j` the zero-shot score is the mean token log-probability of
//! its answer given only its task. The one-shot score for candidate `k`
//! repeats that with the candidate rendered as a demonstration in front of
//! the task. The golden score is the fraction of anchors whose one-shot score
//! is strictly greater than the zero-shot score.

mod run;
pub mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use run::{config_fingerprint, score_dataset, RunOptions, RunSummary};
pub use store::{ScoreStore, StoreError, StoreHeader};

use crate::anchors::AnchorSet;
use crate::backend::{Backend, BackendError, ScoreRequest, ScoredSpan};
use crate::dataset::{DatasetError, ExampleId, InstructionExample, PromptTemplate, Role};
use crate::pool::parallel_map;
use crate::{ErrorKind, Fingerprint};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("anchor {anchor_id} does not fit the context budget on its own: {source}")]
    AnchorOverflow {
        anchor_id: usize,
        #[source]
        source: BackendError,
    },
    #[error("scoring candidate '{candidate}': {source}")]
    Candidate {
        candidate: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Render(#[from] DatasetError),
    #[error("anchor fingerprint mismatch: row {row} vs profile {profile}")]
    AnchorMismatch { row: Fingerprint, profile: Fingerprint },
    #[error("row has {row} entries but profile has {profile}")]
    LengthMismatch { row: usize, profile: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl ScoringError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            ScoringError::Backend(e) | ScoringError::Candidate { source: e, .. } => e.kind(),
            ScoringError::AnchorOverflow { .. } => ErrorKind::Data,
            ScoringError::Render(e) => e.kind(),
            ScoringError::Store(e) => e.kind(),
            _ => ErrorKind::Data,
        }
    }
}

/// What to do with a (candidate, anchor) pair that exceeds the context budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OverflowPolicy {
    /// Record OVERFLOW; it counts as no improvement and `m` stays fixed.
    #[default]
    CountAsNonImprovement,
    /// Record OVERFLOW and drop the pair from the denominator.
    SkipReducesM,
    /// Drop leading characters of the demonstration until the pair fits.
    TruncateDemonstrationLeft,
}

impl OverflowPolicy {
    pub fn name(self) -> &'static str {
        match self {
            OverflowPolicy::CountAsNonImprovement => "count-as-non-improvement",
            OverflowPolicy::SkipReducesM => "skip-reduces-m",
            OverflowPolicy::TruncateDemonstrationLeft => "truncate-demonstration-left",
        }
    }
}

impl fmt::Display for OverflowPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OverflowPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            OverflowPolicy::CountAsNonImprovement,
            OverflowPolicy::SkipReducesM,
            OverflowPolicy::TruncateDemonstrationLeft,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| format!("unknown overflow policy '{s}'"))
    }
}

/// Zero-shot score of every anchor, in anchor order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotProfile {
    pub scores: Vec<f64>,
    pub anchor_fingerprint: Fingerprint,
    pub backend_fingerprint: Fingerprint,
}

impl ZeroShotProfile {
    pub fn m(&self) -> usize {
        self.scores.len()
    }
}

/// A one-shot score, or a marker that the pair did not fit the context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreEntry {
    Score(f64),
    Overflow,
}

impl ScoreEntry {
    pub fn score(self) -> Option<f64> {
        match self {
            ScoreEntry::Score(s) => Some(s),
            ScoreEntry::Overflow => None,
        }
    }
}

const OVERFLOW: &str = "OVERFLOW";

impl Serialize for ScoreEntry {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ScoreEntry::Score(v) => s.serialize_f64(*v),
            ScoreEntry::Overflow => s.serialize_str(OVERFLOW),
        }
    }
}

impl<'de> Deserialize<'de> for ScoreEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(ScoreEntry::Score(v)),
            Repr::Str(s) if s == OVERFLOW => Ok(ScoreEntry::Overflow),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("expected number or \"{OVERFLOW}\", got {s:?}"))),
        }
    }
}

/// One-shot scores of a single candidate against every anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneShotRow {
    pub candidate_id: ExampleId,
    pub scores: Vec<ScoreEntry>,
    pub policy_applied: OverflowPolicy,
    pub anchor_fingerprint: Fingerprint,
    /// Anchors built from this very candidate.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub self_pairs: Vec<usize>,
    /// Anchors for which the demonstration was left-truncated to fit.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub truncated: Vec<usize>,
}

impl OneShotRow {
    pub fn overflow_count(&self) -> usize {
        self.scores.iter().filter(|s| matches!(s, ScoreEntry::Overflow)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenScoreRecord {
    pub candidate_id: ExampleId,
    /// `improvements / m`.
    pub gs: f64,
    pub improvements: usize,
    /// Denominator: the anchor count, less overflowed pairs under `skip-reduces-m`.
    pub m: usize,
    pub overflow_count: usize,
}

/// Golden scores for every candidate, sorted by candidate id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenScoreTable {
    pub run_config_fingerprint: Fingerprint,
    pub records: Vec<GoldenScoreRecord>,
}

impl GoldenScoreTable {
    pub fn new(run_config_fingerprint: Fingerprint, mut records: Vec<GoldenScoreRecord>) -> Self {
        records.sort_by(|a, b| a.candidate_id.cmp(&b.candidate_id));
        GoldenScoreTable { run_config_fingerprint, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &ExampleId) -> Option<&GoldenScoreRecord> {
        self.records
            .binary_search_by(|r| r.candidate_id.cmp(id))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

fn anchor_request(task_text: &str, answer: &str) -> Result<ScoreRequest, BackendError> {
    ScoreRequest::new(task_text, answer)
}

/// Zero-shot score of each anchor. Any anchor that overflows on its own is
/// a hard error.
pub fn zero_shot_profile(
    backend: &dyn Backend,
    anchors: &AnchorSet,
    parallelism: usize,
) -> Result<ZeroShotProfile, ScoringError> {
    let scores = parallel_map(anchors.anchors(), parallelism, |a| {
        let req = anchor_request(&a.task_text, &a.answer_text)?;
        match backend.score_span(&req) {
            Ok(span) => Ok(span.mean()),
            Err(e @ BackendError::ContextOverflow { .. }) => {
                Err(ScoringError::AnchorOverflow { anchor_id: a.anchor_id, source: e })
            }
            Err(e) => Err(e.into()),
        }
    })?;
    Ok(ZeroShotProfile {
        scores,
        anchor_fingerprint: anchors.fingerprint().clone(),
        backend_fingerprint: backend.fingerprint(),
    })
}

/// Byte offsets of every char boundary in `s`, including `s.len()`.
fn char_starts(s: &str) -> Vec<usize> {
    s.char_indices().map(|(i, _)| i).chain(std::iter::once(s.len())).collect()
}

/// Score with the shortest left-truncation of `demo` that fits; `None` if
/// even an empty demonstration overflows.
fn score_truncated(
    backend: &dyn Backend,
    demo: &str,
    suffix: &str,
    target: &str,
) -> Result<Option<ScoredSpan>, BackendError> {
    let cuts = char_starts(demo);
    let attempt = |k: usize| -> Result<Option<ScoredSpan>, BackendError> {
        let prefix = format!("{}{}", &demo[cuts[k]..], suffix);
        let req = ScoreRequest::new(prefix, target)?;
        if let Some(n) = backend.count_tokens(&req.joint()) {
            if n > backend.context_budget() {
                return Ok(None);
            }
        }
        match backend.score_span(&req) {
            Ok(span) => Ok(Some(span)),
            Err(BackendError::ContextOverflow { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    // Invariant: cut `lo` does not fit; cut `hi` fits (with `best` its span).
    let (mut lo, mut hi) = (0, cuts.len() - 1);
    let Some(mut best) = attempt(hi)? else {
        return Ok(None);
    };
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        match attempt(mid)? {
            Some(span) => {
                hi = mid;
                best = span;
            }
            None => lo = mid,
        }
    }
    Ok(Some(best))
}

/// Score `candidate` as a one-shot demonstration in front of every anchor.
pub fn one_shot_row(
    backend: &dyn Backend,
    candidate: &InstructionExample,
    anchors: &AnchorSet,
    template: &PromptTemplate,
    policy: OverflowPolicy,
) -> Result<OneShotRow, ScoringError> {
    let demo = template.render(candidate, Role::Demonstration)?;
    let wrap = |source| ScoringError::Candidate { candidate: candidate.id.to_string(), source };
    let mut scores = Vec::with_capacity(anchors.m());
    let mut self_pairs = Vec::new();
    let mut truncated = Vec::new();
    for (j, anchor) in anchors.anchors().iter().enumerate() {
        if anchor.source_example_id == candidate.id {
            self_pairs.push(j);
        }
        let suffix = format!("{}{}", template.separator(), anchor.task_text);
        let req = ScoreRequest::new(format!("{demo}{suffix}"), anchor.answer_text.as_str()).map_err(wrap)?;
        let entry = match backend.score_span(&req) {
            Ok(span) => ScoreEntry::Score(span.mean()),
            Err(BackendError::ContextOverflow { .. }) => match policy {
                OverflowPolicy::TruncateDemonstrationLeft => {
                    match score_truncated(backend, &demo, &suffix, &anchor.answer_text).map_err(wrap)? {
                        Some(span) => {
                            truncated.push(j);
                            ScoreEntry::Score(span.mean())
                        }
                        None => ScoreEntry::Overflow,
                    }
                }
                _ => ScoreEntry::Overflow,
            },
            Err(e) => return Err(wrap(e)),
        };
        scores.push(entry);
    }
    Ok(OneShotRow {
        candidate_id: candidate.id.clone(),
        scores,
        policy_applied: policy,
        anchor_fingerprint: anchors.fingerprint().clone(),
        self_pairs,
        truncated,
    })
}

/// Count anchors where the one-shot score beats the zero-shot score by more
/// than `tie_epsilon`. Overflowed pairs never count as improvements.
pub fn golden_score(
    row: &OneShotRow,
    profile: &ZeroShotProfile,
    tie_epsilon: f64,
) -> Result<GoldenScoreRecord, ScoringError> {
    if row.anchor_fingerprint != profile.anchor_fingerprint {
        return Err(ScoringError::AnchorMismatch {
            row: row.anchor_fingerprint.clone(),
            profile: profile.anchor_fingerprint.clone(),
        });
    }
    if row.scores.len() != profile.m() {
        return Err(ScoringError::LengthMismatch { row: row.scores.len(), profile: profile.m() });
    }
    let mut improvements = 0;
    let mut overflow_count = 0;
    for (entry, &zsl) in row.scores.iter().zip(&profile.scores) {
        match entry {
            ScoreEntry::Score(iit) if *iit > zsl + tie_epsilon => improvements += 1,
            ScoreEntry::Score(_) => {}
            ScoreEntry::Overflow => overflow_count += 1,
        }
    }
    let m = match row.policy_applied {
        OverflowPolicy::SkipReducesM => profile.m() - overflow_count,
        _ => profile.m(),
    };
    let gs = if m == 0 { 0.0 } else { improvements as f64 / m as f64 };
    Ok(GoldenScoreRecord { candidate_id: row.candidate_id.clone(), gs, improvements, m, overflow_count })
}
