use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng_from_seed;

pub const DEFAULT_MAX_ITERS: usize = 100;

/// Hard assignment of samples to groups plus the group centroids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionMap {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub group_count: usize,
    /// Inertia after every Lloyd update.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, v);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

impl PartitionMap {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.group_count];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }

    /// Sum of squared distances from each vector to its assigned centroid.
    pub fn inertia(&self, vectors: &[Vec<f64>]) -> f64 {
        vectors
            .iter()
            .zip(&self.assignments)
            .map(|(v, &a)| sq_dist(v, &self.centroids[a]))
            .sum()
    }

    /// Nearest centroid, lowest index on ties.
    pub fn assign(&self, v: &[f64]) -> usize {
        nearest(&self.centroids, v).0
    }

    /// Sample indices of group `j`.
    pub fn members(&self, j: usize) -> Vec<usize> {
        self.assignments.iter().enumerate().filter(|(_, &a)| a == j).map(|(i, _)| i).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::from("sample_id,group\n");
        for (i, a) in self.assignments.iter().enumerate() {
            text.push_str(&format!("{i},{a}\n"));
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn kmeans_pp(vectors: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut centroids = vec![vectors[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = vectors[pick].clone();
        for (d, v) in d2.iter_mut().zip(vectors) {
            *d = d.min(sq_dist(v, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn update_centroids(vectors: &[Vec<f64>], assignments: &[usize], k: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (v, &a) in vectors.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(v) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|x| *x /= c as f64);
        }
    }
    (sums, counts)
}

/// Moves the point farthest from its centroid in the largest cluster into
/// each empty cluster until none is empty.
fn repair_empty(vectors: &[Vec<f64>], assignments: &mut [usize], centroids: &mut [Vec<f64>], counts: &mut [usize]) {
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let largest = (0..counts.len()).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap_or(0);
        let mut far = None;
        let mut far_d = -1.0;
        for (i, v) in vectors.iter().enumerate() {
            if assignments[i] == largest {
                let d = sq_dist(v, &centroids[largest]);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
        }
        let Some(i) = far else { break };
        assignments[i] = empty;
        counts[largest] -= 1;
        counts[empty] = 1;
        centroids[empty] = vectors[i].clone();
        let dim = vectors[i].len();
        let mut mean = vec![0.0; dim];
        for (v, _) in vectors.iter().zip(assignments.iter()).filter(|(_, &a)| a == largest) {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= counts[largest] as f64);
        centroids[largest] = mean;
    }
}

/// Lloyd's algorithm with k-means++ seeding under Euclidean distance.
pub fn kmeans(vectors: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<PartitionMap> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    if k > vectors.len() {
        return Err(Error::InvalidInput(format!("k={k} exceeds {} vectors", vectors.len())));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::InvalidShape("vectors differ in length".into()));
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite vector entry".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut centroids = kmeans_pp(vectors, k, &mut rng);
    let mut assignments: Vec<usize> = vectors.iter().map(|v| nearest(&centroids, v).0).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let (mut c, mut counts) = update_centroids(vectors, &assignments, k, dim);
        repair_empty(vectors, &mut assignments, &mut c, &mut counts);
        centroids = c;
        trace.push(vectors.iter().zip(&assignments).map(|(v, &a)| sq_dist(v, &centroids[a])).sum());
        let next: Vec<usize> = vectors.iter().map(|v| nearest(&centroids, v).0).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    // a final pass may have emptied a cluster when max_iters was hit
    let (_, mut counts) = update_centroids(vectors, &assignments, k, dim);
    if counts.contains(&0) {
        repair_empty(vectors, &mut assignments, &mut centroids, &mut counts);
        let (c, _) = update_centroids(vectors, &assignments, k, dim);
        centroids = c;
    } else {
        centroids = update_centroids(vectors, &assignments, k, dim).0;
    }
    Ok(PartitionMap { assignments, centroids, group_count: k, inertia_trace: trace, iterations })
}
