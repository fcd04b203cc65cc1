//! Seeded K-Means with k-means++ seeding and Lloyd iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig { tolerance: 1e-4, max_iter: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre.
pub fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("total > 0");
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[next].clone();
        for (slot, p) in d2.iter_mut().zip(points) {
            *slot = slot.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Cluster `points` into `k` groups. Requires `1 <= k <= points.len()` and
/// equal dimensions. Ties in assignment go to the lower centroid index; an
/// empty cluster keeps its previous centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, config: &KMeansConfig) -> KMeansResult {
    assert!(k >= 1 && k <= points.len(), "k must be in 1..=n");
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let mut assignments = vec![0; points.len()];
    let mut inertia_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let mut inertia = 0.0;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (j, d) = nearest(p, &centroids);
            *a = j;
            inertia += d;
        }
        inertia_history.push(inertia);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut movement: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            movement = movement.max(squared_distance(&new, &centroids[j]).sqrt());
            centroids[j] = new;
        }
        log::debug!("k-means iteration {iterations}: inertia {inertia:.6}, max shift {movement:.3e}");
        if movement < config.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("k-means stopped at max_iter={} without converging", config.max_iter);
    }
    KMeansResult { centroids, assignments, inertia_history, iterations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_centroid_is_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]];
        let r = kmeans(&pts, 1, 5, &KMeansConfig::default());
        assert_eq!(r.centroids[0], vec![1.0, 1.0]);
        assert!(r.converged);
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let pts = vec![vec![0.0], vec![5.0], vec![9.0]];
        let r = kmeans(&pts, 3, 1, &KMeansConfig::default());
        assert_eq!(*r.inertia_history.last().unwrap(), 0.0);
    }

    #[test]
    fn inertia_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec<f64>> = (0..300).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        for seed in 0..5 {
            let r = kmeans(&pts, 7, seed, &KMeansConfig { tolerance: 0.0, max_iter: 50 });
            assert!(r.inertia_history.windows(2).all(|w| w[1] <= w[0]), "{:?}", r.inertia_history);
        }
    }

    #[test]
    fn max_iter_cap_is_not_an_error() {
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let r = kmeans(&pts, 3, 0, &KMeansConfig { tolerance: 0.0, max_iter: 1 });
        assert_eq!(r.iterations, 1);
        assert!(!r.converged);
    }
}
