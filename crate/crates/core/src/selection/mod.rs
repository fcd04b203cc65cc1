//! Subset selection over a golden-score table.

mod export;
mod report;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{export_subset, sidecar_path, ExportSidecar};
pub use report::{default_edges, report, DistributionReport, Summary, ThresholdCount, DEFAULT_THRESHOLDS};

use crate::dataset::{DatasetError, ExampleId};
use crate::scoring::{GoldenScoreRecord, GoldenScoreTable};
use crate::{ErrorKind, Fingerprint};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("fraction must be in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("invalid bucket edges: {0}")]
    InvalidEdges(String),
    #[error("manifest id '{0}' is not in the dataset")]
    UnknownId(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl SelectionError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            SelectionError::InvalidFraction(_) | SelectionError::InvalidEdges(_) => ErrorKind::Config,
            SelectionError::Dataset(e) => e.kind(),
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Greater,
    AtMost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    Threshold { tau: f64, direction: Direction },
    TopFraction { p: f64 },
    TopK { k: usize },
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Threshold { tau, direction: Direction::Greater } => write!(f, "gs > {tau}"),
            Predicate::Threshold { tau, direction: Direction::AtMost } => write!(f, "gs <= {tau}"),
            Predicate::TopFraction { p } => write!(f, "top {p} fraction"),
            Predicate::TopK { k } => write!(f, "top {k}"),
        }
    }
}

/// A selected subset, ordered by descending golden score then ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetManifest {
    pub predicate: Predicate,
    pub source_table_fingerprint: Fingerprint,
    pub count: usize,
    pub candidate_ids: Vec<ExampleId>,
}

impl SubsetManifest {
    fn new(predicate: Predicate, table: &GoldenScoreTable, records: Vec<&GoldenScoreRecord>) -> Self {
        let candidate_ids: Vec<ExampleId> = records.into_iter().map(|r| r.candidate_id.clone()).collect();
        SubsetManifest {
            predicate,
            source_table_fingerprint: table.run_config_fingerprint.clone(),
            count: candidate_ids.len(),
            candidate_ids,
        }
    }
}

/// Records sorted by descending gs, ties by ascending id.
pub fn ranked(table: &GoldenScoreTable) -> Vec<&GoldenScoreRecord> {
    rank(table.records.iter().collect())
}

fn rank(mut recs: Vec<&GoldenScoreRecord>) -> Vec<&GoldenScoreRecord> {
    recs.sort_by(|a, b| b.gs.total_cmp(&a.gs).then_with(|| a.candidate_id.cmp(&b.candidate_id)));
    recs
}

pub fn threshold_subset(table: &GoldenScoreTable, tau: f64, direction: Direction) -> SubsetManifest {
    let keep = |gs: f64| match direction {
        Direction::Greater => gs > tau,
        Direction::AtMost => gs <= tau,
    };
    let picked = rank(table.records.iter().filter(|r| keep(r.gs)).collect());
    SubsetManifest::new(Predicate::Threshold { tau, direction }, table, picked)
}

/// `ceil(p * n)` for `p` in (0, 1], computed on `p * n` rounded to six
/// decimals so that decimal fractions such as 0.07 × 100 give 7 rather than
/// 8. At least one item is kept from a non-empty table.
pub fn fraction_count(p: f64, n: usize) -> usize {
    let x = ((p * n as f64) * 1e6).round() / 1e6;
    (x.ceil() as usize).clamp(n.min(1), n)
}

pub fn top_fraction(table: &GoldenScoreTable, p: f64) -> Result<SubsetManifest, SelectionError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(SelectionError::InvalidFraction(p));
    }
    let n = fraction_count(p, table.len());
    let picked = ranked(table).into_iter().take(n).collect();
    Ok(SubsetManifest::new(Predicate::TopFraction { p }, table, picked))
}

pub fn top_k(table: &GoldenScoreTable, k: usize) -> SubsetManifest {
    let picked = ranked(table).into_iter().take(k).collect();
    SubsetManifest::new(Predicate::TopK { k }, table, picked)
}
