//! Golden-score distribution reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{threshold_subset, Direction, SelectionError};
use crate::scoring::GoldenScoreTable;
use crate::Fingerprint;

pub const DEFAULT_THRESHOLDS: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.85, 0.9];

/// Deciles over [0, 1].
pub fn default_edges() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCount {
    pub tau: f64,
    /// `|{gs > tau}|`
    pub greater: usize,
    /// `|{gs <= tau}|`
    pub at_most: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub source_table_fingerprint: Fingerprint,
    pub bucket_edges: Vec<f64>,
    pub bucket_counts: Vec<usize>,
    pub summary: Summary,
    pub threshold_table: Vec<ThresholdCount>,
}

fn validate_edges(edges: &[f64]) -> Result<(), SelectionError> {
    if edges.len() < 2 {
        return Err(SelectionError::InvalidEdges("need at least two edges".into()));
    }
    if edges.iter().any(|e| !e.is_finite()) {
        return Err(SelectionError::InvalidEdges("edges must be finite".into()));
    }
    if edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SelectionError::InvalidEdges("edges must be strictly increasing".into()));
    }
    if edges[0] > 0.0 || edges[edges.len() - 1] < 1.0 {
        return Err(SelectionError::InvalidEdges("edges must cover [0, 1]".into()));
    }
    Ok(())
}

/// Bucket `i` is `[edges[i], edges[i+1])`; the last bucket is closed.
fn bucket_of(edges: &[f64], v: f64) -> Option<usize> {
    let last = edges.len() - 2;
    if v == edges[last + 1] {
        return Some(last);
    }
    (0..=last).find(|&i| edges[i] <= v && v < edges[i + 1])
}

fn summarize(values: &mut [f64]) -> Summary {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return Summary { count: 0, mean: None, median: None, min: None, max: None };
    }
    let median = if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 };
    Summary {
        count: n,
        mean: Some(values.iter().sum::<f64>() / n as f64),
        median: Some(median),
        min: Some(values[0]),
        max: Some(values[n - 1]),
    }
}

pub fn report(
    table: &GoldenScoreTable,
    bucket_edges: &[f64],
    thresholds: &[f64],
) -> Result<DistributionReport, SelectionError> {
    validate_edges(bucket_edges)?;
    let mut counts = vec![0usize; bucket_edges.len() - 1];
    for r in &table.records {
        let b = bucket_of(bucket_edges, r.gs)
            .ok_or_else(|| SelectionError::InvalidEdges(format!("gs {} outside edges", r.gs)))?;
        counts[b] += 1;
    }
    let mut values: Vec<f64> = table.records.iter().map(|r| r.gs).collect();
    let threshold_table = thresholds
        .iter()
        .map(|&tau| ThresholdCount {
            tau,
            greater: threshold_subset(table, tau, Direction::Greater).count,
            at_most: threshold_subset(table, tau, Direction::AtMost).count,
        })
        .collect();
    Ok(DistributionReport {
        source_table_fingerprint: table.run_config_fingerprint.clone(),
        bucket_edges: bucket_edges.to_vec(),
        bucket_counts: counts,
        summary: summarize(&mut values),
        threshold_table,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl DistributionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let s = &self.summary;
        let _ = writeln!(out, "golden score distribution ({} candidates)", s.count);
        let _ = writeln!(
            out,
            "mean {}  median {}  min {}  max {}\n",
            fmt_opt(s.mean),
            fmt_opt(s.median),
            fmt_opt(s.min),
            fmt_opt(s.max)
        );
        let last = self.bucket_counts.len() - 1;
        let _ = writeln!(out, "{:<18} {:>10}", "bucket", "count");
        for (i, c) in self.bucket_counts.iter().enumerate() {
            let close = if i == last { ']' } else { ')' };
            let label = format!("[{:.3}, {:.3}{close}", self.bucket_edges[i], self.bucket_edges[i + 1]);
            let _ = writeln!(out, "{label:<18} {c:>10}");
        }
        if !self.threshold_table.is_empty() {
            let _ = writeln!(out, "\n{:<8} {:>10} {:>10}", "tau", "gs > tau", "gs <= tau");
            for t in &self.threshold_table {
                let _ = writeln!(out, "{:<8} {:>10} {:>10}", t.tau, t.greater, t.at_most);
            }
        }
        out
    }

    /// `x,y` rows (bucket midpoint, count) for external plotting.
    pub fn plot_data(&self) -> String {
        let mut out = String::from("x,y\n");
        for (i, c) in self.bucket_counts.iter().enumerate() {
            let mid = (self.bucket_edges[i] + self.bucket_edges[i + 1]) / 2.0;
            let _ = writeln!(out, "{mid},{c}");
        }
        out
    }
}
