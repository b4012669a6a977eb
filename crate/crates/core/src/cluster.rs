//! Seeded k-means (k-means++ initialization, Lloyd iterations) in CLR space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::ClrMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("k = {k} is out of range 1..={n}")]
    BadK { k: usize, n: usize },
    #[error("n_init must be at least 1")]
    BadRestarts,
    #[error("tolerance must be finite and non-negative, got {0}")]
    BadTolerance(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest final inertia wins.
    pub n_init: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            ..Self::default()
        }
    }
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 2,
            seed: 0,
            max_iter: 100,
            tol: 1e-8,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub seed: u64,
    /// Lloyd iterations performed by the winning restart.
    pub iterations: usize,
    /// Inertia after each assignment step of the winning restart, ending
    /// with the final assignment. Non-increasing.
    pub inertia_history: Vec<f64>,
}

impl Clustering {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid (lowest index on ties) and the squared distance.
pub fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Sum of squared distances from each row to the centroid named by its label.
pub fn inertia(m: &ClrMatrix, labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    m.iter_rows()
        .zip(labels)
        .map(|(row, &l)| sq_dist(row, &centroids[l]))
        .sum()
}

/// k-means with the default iteration limit, tolerance and restart count.
pub fn kmeans(m: &ClrMatrix, k: usize, seed: u64) -> Result<Clustering, ClusterError> {
    kmeans_with(m, &KMeansConfig::new(k, seed))
}

pub fn kmeans_with(m: &ClrMatrix, config: &KMeansConfig) -> Result<Clustering, ClusterError> {
    let n = m.rows();
    if config.k < 1 || config.k > n {
        return Err(ClusterError::BadK { k: config.k, n });
    }
    if config.n_init < 1 {
        return Err(ClusterError::BadRestarts);
    }
    if !(config.tol.is_finite() && config.tol >= 0.0) {
        return Err(ClusterError::BadTolerance(config.tol));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..config.n_init {
        let init = kmeans_plus_plus(m, config.k, &mut rng);
        let run = lloyd(m, init, config);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

fn kmeans_plus_plus(m: &ClrMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = m.rows();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![m.row(first).to_vec()];
    let mut dist: Vec<f64> = m.iter_rows().map(|r| sq_dist(r, m.row(first))).collect();

    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                acc += d;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // Every remaining point coincides with a centroid.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = m.row(pick).to_vec();
        for (d, row) in dist.iter_mut().zip(m.iter_rows()) {
            *d = d.min(sq_dist(row, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(m: &ClrMatrix, centroids: &[Vec<f64>], labels: &mut [usize], dists: &mut [f64]) {
    for (i, row) in m.iter_rows().enumerate() {
        let (l, d) = nearest_centroid(row, centroids);
        labels[i] = l;
        dists[i] = d;
    }
}

/// Moves each empty cluster's centroid onto the point farthest from its own
/// centroid, taken from a cluster that can spare it.
fn reseed_empty(
    m: &ClrMatrix,
    centroids: &mut [Vec<f64>],
    labels: &mut [usize],
    dists: &mut [f64],
) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for j in 0..k {
        if sizes[j] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for i in 0..labels.len() {
            if sizes[labels[i]] > 1 && far.is_none_or(|f| dists[i] > dists[f]) {
                far = Some(i);
            }
        }
        let Some(p) = far else { break };
        sizes[labels[p]] -= 1;
        sizes[j] = 1;
        labels[p] = j;
        dists[p] = 0.0;
        centroids[j] = m.row(p).to_vec();
    }
}

fn update_means(m: &ClrMatrix, labels: &[usize], centroids: &mut [Vec<f64>]) {
    let d = m.cols();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (row, &l) in m.iter_rows().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(row) {
            *s += x;
        }
    }
    for ((c, s), &cnt) in centroids.iter_mut().zip(sums).zip(&counts) {
        if cnt > 0 {
            *c = s.into_iter().map(|v| v / cnt as f64).collect();
        }
    }
}

fn lloyd(m: &ClrMatrix, mut centroids: Vec<Vec<f64>>, config: &KMeansConfig) -> Clustering {
    let n = m.rows();
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    while iterations < config.max_iter {
        assign(m, &centroids, &mut labels, &mut dists);
        reseed_empty(m, &mut centroids, &mut labels, &mut dists);
        history.push(dists.iter().sum());

        let previous = centroids.clone();
        update_means(m, &labels, &mut centroids);
        iterations += 1;

        let shift = previous
            .iter()
            .zip(&centroids)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        if shift < config.tol {
            break;
        }
    }

    assign(m, &centroids, &mut labels, &mut dists);
    let inertia = dists.iter().sum();
    history.push(inertia);

    Clustering {
        k: centroids.len(),
        labels,
        centroids,
        inertia,
        seed: config.seed,
        iterations,
        inertia_history: history,
    }
}
