//! Clustering-based test-set sampling: seeded Lloyd k-means, nearest
//! instance prototypes and per-dataset quotas.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const DEFAULT_PLAN: &str = include_str!("../data/sample_plan.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("no vectors to cluster")]
    EmptyInput,
    #[error("k must be at least 1")]
    ZeroClusters,
    #[error("k = {k} exceeds the {n} available vectors")]
    TooManyClusters { k: usize, n: usize },
    #[error("vector {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("vector {0} contains a non-finite value")]
    NonFinite(usize),
    #[error("dataset `{dataset}` has {available} items but the plan asks for {requested}")]
    QuotaTooLarge { dataset: String, requested: usize, available: usize },
    #[error("malformed sample plan: {0}")]
    BadPlan(String),
}

/// Per-dataset instance counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SamplePlan {
    pub counts: BTreeMap<String, usize>,
}

impl SamplePlan {
    pub fn from_json(text: &str) -> Result<Self, SamplingError> {
        serde_json::from_str(text).map_err(|e| SamplingError::BadPlan(e.to_string()))
    }

    pub fn default_plan() -> Self {
        Self::from_json(DEFAULT_PLAN).expect("bundled plan parses")
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    /// Objective after each assignment step, starting with the initial one.
    pub objective_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions { max_iter: 300, tol: 1e-9 }
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
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

fn assign(vectors: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut objective = 0.0;
    let assignments = vectors
        .iter()
        .map(|v| {
            let (j, d) = nearest(v, centroids);
            objective += d;
            j
        })
        .collect();
    (assignments, objective)
}

fn check_input(vectors: &[Vec<f64>], k: usize) -> Result<(), SamplingError> {
    if vectors.is_empty() {
        return Err(SamplingError::EmptyInput);
    }
    if k == 0 {
        return Err(SamplingError::ZeroClusters);
    }
    if k > vectors.len() {
        return Err(SamplingError::TooManyClusters { k, n: vectors.len() });
    }
    let dim = vectors[0].len();
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(SamplingError::DimensionMismatch {
                index: i,
                expected: dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(SamplingError::NonFinite(i));
        }
    }
    Ok(())
}

fn update(vectors: &[Vec<f64>], assignments: &[usize], old: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = vectors[0].len();
    let k = old.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (v, &j) in vectors.iter().zip(assignments) {
        counts[j] += 1;
        for (s, x) in sums[j].iter_mut().zip(v) {
            *s += x;
        }
    }
    let mut centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .zip(old)
        .map(|((s, &n), prev)| {
            if n == 0 {
                prev.clone()
            } else {
                s.into_iter().map(|x| x / n as f64).collect()
            }
        })
        .collect();
    let mut taken: Vec<usize> = Vec::new();
    for j in (0..k).filter(|&j| counts[j] == 0) {
        let far = vectors
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken.contains(i))
            .map(|(i, v)| (i, squared_distance(v, &centroids[assignments[i]])))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        if let Some((i, _)) = far {
            taken.push(i);
            centroids[j] = vectors[i].clone();
        }
    }
    centroids
}

/// Lloyd's algorithm from `k` distinct points drawn with `seed`.
pub fn kmeans(vectors: &[Vec<f64>], k: usize, seed: u64, opts: &KMeansOptions) -> Result<ClusteringResult, SamplingError> {
    check_input(vectors, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = rand::seq::index::sample(&mut rng, vectors.len(), k).into_vec();
    init.sort_unstable();
    let mut centroids: Vec<Vec<f64>> = init.iter().map(|&i| vectors[i].clone()).collect();
    let (mut assignments, mut objective) = assign(vectors, &centroids);
    let mut history = vec![objective];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        centroids = update(vectors, &assignments, &centroids);
        let (next, next_objective) = assign(vectors, &centroids);
        history.push(next_objective);
        let changed = next != assignments;
        let improvement = objective - next_objective;
        assignments = next;
        objective = next_objective;
        if !changed || improvement < opts.tol {
            break;
        }
    }
    Ok(ClusteringResult {
        centroids,
        assignments,
        objective,
        iterations,
        objective_history: history,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collision {
    pub centroid: usize,
    pub index: usize,
    /// The earlier centroid that already claimed `index`.
    pub claimed_by: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Representatives {
    /// Selected item indices in centroid order.
    pub indices: Vec<usize>,
    pub collisions: Vec<Collision>,
}

/// For each centroid, the nearest actual vector; ties go to the lower index.
pub fn select_representatives(vectors: &[Vec<f64>], result: &ClusteringResult) -> Representatives {
    let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out = Representatives {
        indices: Vec::new(),
        collisions: Vec::new(),
    };
    for (j, c) in result.centroids.iter().enumerate() {
        let (i, _) = nearest(c, vectors);
        match owner.get(&i) {
            Some(&claimed_by) => out.collisions.push(Collision {
                centroid: j,
                index: i,
                claimed_by,
            }),
            None => {
                owner.insert(i, j);
                out.indices.push(i);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSample {
    pub requested: usize,
    /// Sorted selected indices.
    pub indices: Vec<usize>,
    pub collisions: Vec<Collision>,
    pub objective: f64,
    pub iterations: usize,
}

fn dataset_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"))
}

/// Clusters each planned dataset with `k` = its quota and keeps the
/// nearest instance to every centroid.
pub fn build_sample(
    datasets: &BTreeMap<String, Vec<Vec<f64>>>,
    plan: &SamplePlan,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<BTreeMap<String, DatasetSample>, SamplingError> {
    let mut out = BTreeMap::new();
    for (tag, &count) in &plan.counts {
        let vectors = datasets.get(tag).map(|v| v.as_slice()).unwrap_or(&[]);
        if count > vectors.len() {
            return Err(SamplingError::QuotaTooLarge {
                dataset: tag.clone(),
                requested: count,
                available: vectors.len(),
            });
        }
        if count == 0 {
            out.insert(
                tag.clone(),
                DatasetSample {
                    requested: 0,
                    indices: Vec::new(),
                    collisions: Vec::new(),
                    objective: 0.0,
                    iterations: 0,
                },
            );
            continue;
        }
        let result = kmeans(vectors, count, dataset_seed(seed, tag), opts)?;
        let reps = select_representatives(vectors, &result);
        let mut indices = reps.indices;
        indices.sort_unstable();
        out.insert(
            tag.clone(),
            DatasetSample {
                requested: count,
                indices,
                collisions: reps.collisions,
                objective: result.objective,
                iterations: result.iterations,
            },
        );
    }
    Ok(out)
}
