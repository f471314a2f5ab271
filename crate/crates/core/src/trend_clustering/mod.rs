//! Trend extraction from visit delta series.
//!
//! Two algorithms share one Lloyd-style driver: K-Means on
//! `znorm(log1p(deltas))` under squared Euclidean distance, and KSC on raw
//! deltas under the shift- and scale-invariant KSC distance. Both use
//! k-means++ seeding under their own distance and record the objective
//! (sum of squared distances) after every assignment step.

mod ksc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::PageRecord;
use crate::error::{Error, Result};
use crate::transforms::{log1p_series, to_delta, znorm};

pub use ksc::{ksc_centroid, ksc_distance, KscAlignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterAlgorithm {
    KMeans,
    Ksc,
}

impl ClusterAlgorithm {
    pub fn name(self) -> &'static str {
        match self {
            ClusterAlgorithm::KMeans => "kmeans",
            ClusterAlgorithm::Ksc => "ksc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(ClusterAlgorithm::KMeans),
            "ksc" => Ok(ClusterAlgorithm::Ksc),
            other => Err(Error::invalid(format!("unknown clustering algorithm {other}"))),
        }
    }

    pub fn recipe(self) -> TransformRecipe {
        match self {
            ClusterAlgorithm::KMeans => TransformRecipe::Log1pZnorm,
            ClusterAlgorithm::Ksc => TransformRecipe::RawDelta,
        }
    }
}

/// How a visit delta series is mapped into the clustering space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformRecipe {
    /// `znorm(log1p(delta))`.
    Log1pZnorm,
    /// Deltas as-is.
    RawDelta,
}

impl TransformRecipe {
    /// Negative gains (possible only in leniently loaded data) are clamped
    /// to zero first.
    pub fn apply(self, delta: &[f64]) -> Vec<f64> {
        let clamped: Vec<f64> = delta.iter().map(|&d| d.max(0.0)).collect();
        match self {
            TransformRecipe::RawDelta => clamped,
            TransformRecipe::Log1pZnorm => {
                znorm(&log1p_series(&clamped).expect("clamped deltas are non-negative"))
            }
        }
    }
}

/// Tuning knobs for [`fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub algorithm: ClusterAlgorithm,
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl ClusterConfig {
    pub fn new(algorithm: ClusterAlgorithm, k: usize, seed: u64) -> Self {
        ClusterConfig {
            algorithm,
            k,
            seed,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

/// Fitted trend centroids plus everything needed to featurize new pages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendModel {
    pub algorithm: ClusterAlgorithm,
    pub recipe: TransformRecipe,
    pub k: usize,
    pub window_count: usize,
    pub centroids: Vec<Vec<f64>>,
    pub objective: f64,
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
}

impl TrendModel {
    /// Distance of an already-transformed series to one centroid:
    /// squared Euclidean for K-Means, KSC distance for KSC.
    pub fn metric(&self, x: &[f64], centroid: &[f64]) -> f64 {
        metric(self.algorithm, x, centroid).0
    }

    /// Distances from a page's transformed visit deltas to every centroid.
    pub fn distance_features(&self, page: &PageRecord) -> Result<Vec<f64>> {
        let visits = page.visits.values();
        if visits.len() != self.window_count {
            return Err(Error::LengthMismatch {
                expected: self.window_count,
                found: visits.len(),
            });
        }
        let x = self.recipe.apply(&to_delta(visits));
        Ok(self.centroids.iter().map(|c| self.metric(&x, c)).collect())
    }
}

/// Free-function form of [`TrendModel::distance_features`].
pub fn distance_features(tm: &TrendModel, page: &PageRecord) -> Result<Vec<f64>> {
    tm.distance_features(page)
}

/// Result of [`fit`]: the model and the final assignment of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendFit {
    pub model: TrendModel,
    pub labels: Vec<usize>,
    /// Distance of each row to its assigned centroid (metric units).
    pub distances: Vec<f64>,
}

/// Distance plus the KSC shift found for it (0 for K-Means).
fn metric(algorithm: ClusterAlgorithm, x: &[f64], c: &[f64]) -> (f64, isize) {
    match algorithm {
        ClusterAlgorithm::KMeans => (x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum(), 0),
        ClusterAlgorithm::Ksc => {
            let a = ksc_distance(x, c).expect("equal lengths");
            (a.distance, a.q)
        }
    }
}

/// Objective contribution of a distance.
fn cost(algorithm: ClusterAlgorithm, d: f64) -> f64 {
    match algorithm {
        ClusterAlgorithm::KMeans => d,
        ClusterAlgorithm::Ksc => d * d,
    }
}

/// The centroid a single point would have on its own.
fn canonical(algorithm: ClusterAlgorithm, x: &[f64]) -> Vec<f64> {
    match algorithm {
        ClusterAlgorithm::KMeans => x.to_vec(),
        ClusterAlgorithm::Ksc => {
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                vec![0.0; x.len()]
            } else {
                x.iter().map(|v| v / n).collect()
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Assignment {
    label: usize,
    distance: f64,
    q: isize,
}

fn assign(algorithm: ClusterAlgorithm, data: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<Assignment> {
    data.par_iter()
        .map(|x| {
            let mut best = Assignment {
                label: 0,
                distance: f64::INFINITY,
                q: 0,
            };
            for (label, c) in centroids.iter().enumerate() {
                let (distance, q) = metric(algorithm, x, c);
                if distance < best.distance {
                    best = Assignment { label, distance, q };
                }
            }
            best
        })
        .collect()
}

fn seed_centroids(
    algorithm: ClusterAlgorithm,
    data: &[Vec<f64>],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![canonical(algorithm, &data[first])];
    let mut nearest: Vec<f64> = data
        .par_iter()
        .map(|x| cost(algorithm, metric(algorithm, x, &centroids[0]).0))
        .collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` beyond the final partial sum.
            pick.unwrap_or_else(|| nearest.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            (0..n).find(|&i| !chosen[i]).expect("k <= rows")
        };
        chosen[pick] = true;
        let c = canonical(algorithm, &data[pick]);
        nearest
            .par_iter_mut()
            .zip(data.par_iter())
            .for_each(|(d, x)| *d = d.min(cost(algorithm, metric(algorithm, x, &c).0)));
        centroids.push(c);
    }
    centroids
}

/// Moves the worst-served point of a multi-member cluster into each empty
/// cluster. Lowers the objective or leaves it unchanged.
fn reseed_empty(
    algorithm: ClusterAlgorithm,
    data: &[Vec<f64>],
    centroids: &mut [Vec<f64>],
    assigned: &mut [Assignment],
) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for a in assigned.iter() {
        sizes[a.label] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut donor: Option<usize> = None;
        for (i, a) in assigned.iter().enumerate() {
            if sizes[a.label] >= 2
                && a.distance > 0.0
                && donor.is_none_or(|j| a.distance > assigned[j].distance)
            {
                donor = Some(i);
            }
        }
        let Some(i) = donor else { continue };
        sizes[assigned[i].label] -= 1;
        sizes[c] = 1;
        centroids[c] = canonical(algorithm, &data[i]);
        assigned[i] = Assignment {
            label: c,
            distance: 0.0,
            q: 0,
        };
    }
}

fn cluster_cost(algorithm: ClusterAlgorithm, members: &[&Vec<f64>], centroid: &[f64]) -> f64 {
    members
        .iter()
        .map(|x| cost(algorithm, metric(algorithm, x, centroid).0))
        .sum()
}

/// Centroid update. A candidate replaces the current centroid only when it
/// does not raise the cluster's cost, which keeps the objective monotone
/// even where the KSC eigen-update (computed on shift-truncated members)
/// is not the exact minimizer.
fn update_centroids(
    algorithm: ClusterAlgorithm,
    data: &[Vec<f64>],
    centroids: &[Vec<f64>],
    assigned: &[Assignment],
) -> Result<Vec<Vec<f64>>> {
    let k = centroids.len();
    let w = centroids[0].len();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, a) in assigned.iter().enumerate() {
        groups[a.label].push(i);
    }
    groups
        .par_iter()
        .enumerate()
        .map(|(c, idx)| {
            if idx.is_empty() {
                return Ok(centroids[c].clone());
            }
            let candidate = match algorithm {
                ClusterAlgorithm::KMeans => {
                    let mut mean = vec![0.0; w];
                    for &i in idx {
                        for (m, v) in mean.iter_mut().zip(&data[i]) {
                            *m += v;
                        }
                    }
                    mean.iter_mut().for_each(|m| *m /= idx.len() as f64);
                    mean
                }
                ClusterAlgorithm::Ksc => {
                    let members: Vec<&[f64]> = idx.iter().map(|&i| data[i].as_slice()).collect();
                    let alignments: Vec<KscAlignment> = idx
                        .iter()
                        .map(|&i| KscAlignment {
                            alpha: 0.0,
                            q: assigned[i].q,
                            distance: assigned[i].distance,
                        })
                        .collect();
                    ksc_centroid(&members, &alignments)?
                }
            };
            let members: Vec<&Vec<f64>> = idx.iter().map(|&i| &data[i]).collect();
            if cluster_cost(algorithm, &members, &candidate)
                <= cluster_cost(algorithm, &members, &centroids[c])
            {
                Ok(candidate)
            } else {
                Ok(centroids[c].clone())
            }
        })
        .collect()
}

/// Clusters visit delta series (one row per page, raw gains).
pub fn fit(rows: &[Vec<f64>], config: &ClusterConfig) -> Result<TrendFit> {
    let ClusterConfig {
        algorithm,
        k,
        seed,
        max_iter,
        tol,
    } = *config;
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > rows.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} available series",
            rows.len()
        )));
    }
    if max_iter < 1 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    let window_count = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != window_count) {
        return Err(Error::LengthMismatch {
            expected: window_count,
            found: bad.len(),
        });
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::numerical("non-finite value in clustering input"));
    }

    let recipe = algorithm.recipe();
    let data: Vec<Vec<f64>> = rows.par_iter().map(|r| recipe.apply(r)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(algorithm, &data, k, &mut rng);

    let mut history = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let assigned = loop {
        iterations += 1;
        let mut assigned = assign(algorithm, &data, &centroids);
        reseed_empty(algorithm, &data, &mut centroids, &mut assigned);
        let objective: f64 = assigned.iter().map(|a| cost(algorithm, a.distance)).sum();
        let new_labels: Vec<usize> = assigned.iter().map(|a| a.label).collect();
        let fixpoint = new_labels == labels;
        let small_change = history.last().is_some_and(|&prev: &f64| {
            prev <= 0.0 || (prev - objective) / prev < tol
        });
        history.push(objective);
        labels = new_labels;
        if fixpoint || small_change || objective == 0.0 {
            converged = true;
            break assigned;
        }
        if iterations >= max_iter {
            break assigned;
        }
        centroids = update_centroids(algorithm, &data, &centroids, &assigned)?;
    };

    let model = TrendModel {
        algorithm,
        recipe,
        k,
        window_count,
        centroids,
        objective: *history.last().expect("at least one iteration"),
        objective_history: history,
        iterations,
        converged,
        seed,
    };
    Ok(TrendFit {
        model,
        labels,
        distances: assigned.iter().map(|a| a.distance).collect(),
    })
}

/// Visit delta series for every page, in dataset order.
pub fn visit_deltas(pages: &[PageRecord]) -> Vec<Vec<f64>> {
    pages.iter().map(|p| to_delta(p.visits.values())).collect()
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let pairs = |c: u64| (c * c.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| pairs(table.iter().map(|r| r[j]).sum())).sum();
    let total = pairs(n as u64);
    let expected = if total > 0.0 { rows * cols / total } else { 0.0 };
    let max = (rows + cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
