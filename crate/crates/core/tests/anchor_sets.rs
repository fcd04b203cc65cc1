mod common;

use std::collections::BTreeSet;

use common::{planted_clusters, synthetic_dataset};
use goldsel::anchors::kmeans::{kmeans, KMeansConfig};
use goldsel::anchors::{sample_kmeans, sample_random, AnchorError, AnchorSet, KMeansAnchorOptions};
use goldsel::dataset::{Dataset, InstructionExample, PromptTemplate};
use proptest::prelude::*;
use tempfile::tempdir;

#[test]
fn kmeans_recovers_planted_clusters() {
    let template = PromptTemplate::alpaca();
    for seed in 0..10 {
        let (dataset, backend, clusters) = planted_clusters(100 + seed);
        let out = sample_kmeans(&dataset, 3, seed, &backend, &template, &KMeansAnchorOptions::default()).unwrap();
        let hit: BTreeSet<usize> = out
            .set
            .anchors()
            .iter()
            .map(|a| clusters[a.source_example_id.as_str().parse::<usize>().unwrap()])
            .collect();
        assert_eq!(hit.len(), 3, "seed {seed}");
        assert!(out.clustering.converged);
        assert!(out.clustering.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}

#[test]
fn kmeans_is_deterministic_per_seed() {
    let (dataset, backend, _) = planted_clusters(1);
    let template = PromptTemplate::alpaca();
    let opts = KMeansAnchorOptions { parallelism: 4, ..Default::default() };
    let a = sample_kmeans(&dataset, 3, 9, &backend, &template, &opts).unwrap();
    let b = sample_kmeans(&dataset, 3, 9, &backend, &template, &KMeansAnchorOptions::default()).unwrap();
    assert_eq!(a.set, b.set);
}

#[test]
fn kmeans_needs_distinct_embeddings() {
    let (dataset, mut backend, _) = planted_clusters(1);
    for e in dataset.examples() {
        backend.insert_embedding(goldsel::anchors::embedding_text(e), vec![1.0, 2.0]);
    }
    let err = sample_kmeans(&dataset, 2, 0, &backend, &PromptTemplate::alpaca(), &Default::default()).unwrap_err();
    assert!(matches!(err, AnchorError::TooFewDistinct { k: 2, distinct: 1 }));
}

#[test]
fn random_full_pool_is_a_permutation() {
    let dataset = synthetic_dataset(25);
    let set = sample_random(&dataset, 25, 3, &PromptTemplate::alpaca()).unwrap();
    let ids: BTreeSet<_> = set.anchors().iter().map(|a| a.source_example_id.clone()).collect();
    assert_eq!(ids.len(), 25);
    assert_eq!(set.anchors().iter().map(|a| a.anchor_id).collect::<Vec<_>>(), (0..25).collect::<Vec<_>>());
}

#[test]
fn empty_answers_are_not_eligible() {
    let mut examples: Vec<_> = synthetic_dataset(4).examples().to_vec();
    examples.push(InstructionExample::new(4.into(), "blank", None, "  "));
    let dataset = Dataset::from_examples(examples).unwrap();
    let err = sample_random(&dataset, 5, 0, &PromptTemplate::alpaca()).unwrap_err();
    assert!(matches!(err, AnchorError::PoolTooSmall { requested: 5, eligible: 4 }));
    assert!(matches!(sample_random(&dataset, 0, 0, &PromptTemplate::alpaca()), Err(AnchorError::ZeroAnchors)));
}

#[test]
fn anchor_file_round_trip_and_tamper_check() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("anchors.json");
    let set = sample_random(&synthetic_dataset(20), 5, 1, &PromptTemplate::alpaca()).unwrap();
    set.save(&path).unwrap();
    assert_eq!(AnchorSet::load(&path).unwrap(), set);

    let text = std::fs::read_to_string(&path).unwrap().replacen("Answer", "Answr", 1);
    std::fs::write(&path, text).unwrap();
    assert!(matches!(AnchorSet::load(&path), Err(AnchorError::File { .. })));
}

proptest! {
    #[test]
    fn inertia_never_increases(
        points in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 4..60),
        k in 1usize..5,
        seed in any::<u64>(),
    ) {
        let k = k.min(points.len());
        let result = kmeans(&points, k, seed, &KMeansConfig::default());
        prop_assert!(result.inertia_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-12));
        prop_assert_eq!(result.assignments.len(), points.len());
        prop_assert!(result.assignments.iter().all(|&a| a < k));
    }

    #[test]
    fn random_anchors_are_distinct(n in 1usize..60, frac in 0.0..1.0f64, seed in any::<u64>()) {
        let m = ((n as f64 * frac) as usize).max(1);
        let set = sample_random(&synthetic_dataset(n), m, seed, &PromptTemplate::alpaca()).unwrap();
        let ids: BTreeSet<_> = set.anchors().iter().map(|a| a.source_example_id.clone()).collect();
        prop_assert_eq!(ids.len(), m);
    }
}
