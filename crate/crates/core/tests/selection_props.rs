mod common;

use std::collections::BTreeSet;

use common::{synthetic_dataset, table_of};
use goldsel::dataset::{load_dataset, ExampleId, Format, LoadOptions};
use goldsel::selection::{
    default_edges, export_subset, fraction_count, report, sidecar_path, threshold_subset, top_fraction, Direction,
    ExportSidecar, DEFAULT_THRESHOLDS,
};
use proptest::prelude::*;
use tempfile::tempdir;

fn gs_values() -> impl Strategy<Value = Vec<f64>> {
    (1usize..=20).prop_flat_map(|m| prop::collection::vec((0..=m).prop_map(move |k| k as f64 / m as f64), 0..200))
}

fn ids(v: &[ExampleId]) -> BTreeSet<ExampleId> {
    v.iter().cloned().collect()
}

proptest! {
    #[test]
    fn threshold_is_monotone(gs in gs_values(), a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let table = table_of(&gs);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let wide = threshold_subset(&table, lo, Direction::Greater);
        let narrow = threshold_subset(&table, hi, Direction::Greater);
        prop_assert!(ids(&narrow.candidate_ids).is_subset(&ids(&wide.candidate_ids)));
    }

    #[test]
    fn threshold_partitions(gs in gs_values(), tau in 0.0..=1.0f64) {
        let table = table_of(&gs);
        let above = ids(&threshold_subset(&table, tau, Direction::Greater).candidate_ids);
        let below = ids(&threshold_subset(&table, tau, Direction::AtMost).candidate_ids);
        prop_assert!(above.is_disjoint(&below));
        prop_assert_eq!(above.len() + below.len(), gs.len());
        prop_assert_eq!(above.len(), gs.iter().filter(|&&g| g > tau).count());
    }

    #[test]
    fn top_fractions_nest(gs in gs_values(), a in 0.001..=1.0f64, b in 0.001..=1.0f64) {
        let table = table_of(&gs);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = top_fraction(&table, lo).unwrap();
        let big = top_fraction(&table, hi).unwrap();
        prop_assert_eq!(&big.candidate_ids[..small.count], &small.candidate_ids[..]);
        prop_assert_eq!(small.count, fraction_count(lo, gs.len()));
    }

    #[test]
    fn top_fraction_takes_the_highest(gs in gs_values(), p in 0.001..=1.0f64) {
        let table = table_of(&gs);
        let sel = top_fraction(&table, p).unwrap();
        let chosen = ids(&sel.candidate_ids);
        let min_in = sel.candidate_ids.iter().map(|id| table.get(id).unwrap().gs).fold(f64::INFINITY, f64::min);
        for r in &table.records {
            if !chosen.contains(&r.candidate_id) {
                prop_assert!(r.gs <= min_in);
            }
        }
    }

    #[test]
    fn report_counts_every_record(gs in gs_values()) {
        let table = table_of(&gs);
        let rep = report(&table, &default_edges(), &DEFAULT_THRESHOLDS).unwrap();
        prop_assert_eq!(rep.bucket_counts.iter().sum::<usize>(), gs.len());
        for t in &rep.threshold_table {
            prop_assert_eq!(t.greater + t.at_most, gs.len());
        }
    }

    #[test]
    fn fraction_count_bounds(p in 0.000001..=1.0f64, n in 0usize..100_000) {
        let k = fraction_count(p, n);
        prop_assert!(k <= n);
        prop_assert!(n == 0 || k >= 1);
        prop_assert!(k as f64 >= p * n as f64 - 1e-6);
    }
}

#[test]
fn top_one_percent_of_alpaca_size() {
    assert_eq!(fraction_count(0.01, 52_002), 521);
    assert_eq!(fraction_count(0.07, 100), 7);
    assert_eq!(fraction_count(1.0, 52_002), 52_002);
}

#[test]
fn invalid_fraction_rejected() {
    let table = table_of(&[0.5]);
    assert!(top_fraction(&table, 0.0).is_err());
    assert!(top_fraction(&table, 1.5).is_err());
    assert!(top_fraction(&table, f64::NAN).is_err());
}

#[test]
fn export_preserves_records_and_order() {
    let dir = tempdir().unwrap();
    let dataset = synthetic_dataset(10);
    let gs: Vec<f64> = (0..10).map(|i| (i % 4) as f64 / 4.0).collect();
    let table = table_of(&gs);
    let manifest = threshold_subset(&table, 0.5, Direction::Greater);
    let path = dir.path().join("subset.json");
    let sidecar = export_subset(&manifest, &dataset, &path, Format::JsonArray).unwrap();
    assert_eq!(sidecar.description, "gs > 0.5");

    let back = load_dataset(&path, Format::JsonArray, &LoadOptions::default()).unwrap();
    let got: Vec<(&str, &str)> = back.examples().iter().map(|e| (e.instruction.as_str(), e.answer.as_str())).collect();
    let want: Vec<(&str, &str)> = manifest
        .candidate_ids
        .iter()
        .map(|id| dataset.get(id).unwrap())
        .map(|e| (e.instruction.as_str(), e.answer.as_str()))
        .collect();
    assert_eq!(got, want);

    let meta: ExportSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
    assert_eq!(meta, sidecar);
    assert_eq!(meta.manifest.count, 2);
}
