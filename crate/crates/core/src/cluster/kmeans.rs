use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{standardize_rows, ClusterAssignment};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { restarts: 10, max_iter: 100 }
    }
}

impl KMeansConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.max_iter == 0 {
            return Err(Error::Config("k-means needs restarts >= 1 and max_iter >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: ClusterAssignment,
    /// Sum over assets of `1 - r(e_i, centroid)`.
    pub loss: f64,
    /// Loss after each assignment step of the winning restart.
    pub loss_trace: Vec<f64>,
    pub restart: usize,
}

/// k-means under the correlation distance `1 - r`. Rows are standardized
/// first; centroids are the normalized mean of the standardized members,
/// which is the minimizer of the within-cluster loss.
pub fn kmeans(residuals: &Matrix, m: usize, config: &KMeansConfig, seed: u64) -> Result<KMeansResult> {
    let z = standardize_rows(residuals)?;
    kmeans_standardized(&z, m, config, seed)
}

/// Same as [`kmeans`] for rows that are already centered with unit norm.
pub fn kmeans_standardized(z: &Matrix, m: usize, config: &KMeansConfig, seed: u64) -> Result<KMeansResult> {
    config.validate()?;
    let p = z.nrows();
    if m == 0 || m > p {
        return Err(Error::Data(format!("cluster count {m} must be in 1..={p}")));
    }
    let mut best: Option<KMeansResult> = None;
    for restart in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let (labels, loss, trace) = single_run(z, m, config.max_iter, &mut rng);
        if best.as_ref().is_none_or(|b| loss < b.loss) {
            best = Some(KMeansResult {
                assignment: ClusterAssignment::from_labels(&labels),
                loss,
                loss_trace: trace,
                restart,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

fn seed_centroids(z: &Matrix, m: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let p = z.nrows();
    let mut chosen = Vec::with_capacity(m);
    chosen.push(rng.random_range(0..p));
    let mut min_d: Vec<f64> = (0..p).map(|i| distance(z, i, z, chosen[0])).collect();
    min_d[chosen[0]] = 0.0;
    while chosen.len() < m {
        let total: f64 = min_d.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in min_d.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if u < d {
                        break;
                    }
                    u -= d;
                }
            }
            pick.expect("positive total weight")
        } else {
            let free: Vec<usize> = (0..p).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        min_d[next] = 0.0;
        for (i, d) in min_d.iter_mut().enumerate() {
            if *d > 0.0 {
                *d = d.min(distance(z, i, z, next));
            }
        }
    }
    Matrix::from_fn(m, z.ncols(), |c, t| z[(chosen[c], t)])
}

fn distance(a: &Matrix, i: usize, b: &Matrix, j: usize) -> f64 {
    (1.0 - a.row(i).dot(&b.row(j))).max(0.0)
}

fn single_run(z: &Matrix, m: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64, Vec<f64>) {
    let p = z.nrows();
    let mut centroids = seed_centroids(z, m, rng);
    let mut labels = vec![usize::MAX; p];
    let mut trace = Vec::new();
    let mut loss = f64::INFINITY;
    for _ in 0..max_iter {
        let sims = z * centroids.transpose();
        let mut changed = false;
        let mut dist = vec![0.0; p];
        for i in 0..p {
            let mut best = 0;
            for c in 1..m {
                if sims[(i, c)] > sims[(i, best)] {
                    best = c;
                }
            }
            dist[i] = (1.0 - sims[(i, best)]).max(0.0);
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        loss = dist.iter().sum();
        trace.push(loss);
        if !changed {
            break;
        }
        fill_empty_clusters(&mut labels, &mut dist, m);
        centroids = update_centroids(z, &labels, m);
    }
    (labels, loss, trace)
}

/// Moves the point farthest from its centroid (among clusters with more than
/// one member) into each empty cluster.
fn fill_empty_clusters(labels: &mut [usize], dist: &mut [f64], m: usize) {
    let mut sizes = vec![0usize; m];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for c in 0..m {
        if sizes[c] > 0 {
            continue;
        }
        let far = (0..labels.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .fold(None, |acc: Option<usize>, i| match acc {
                Some(j) if dist[j] >= dist[i] => Some(j),
                _ => Some(i),
            });
        if let Some(i) = far {
            sizes[labels[i]] -= 1;
            labels[i] = c;
            sizes[c] = 1;
            dist[i] = 0.0;
        }
    }
}

fn update_centroids(z: &Matrix, labels: &[usize], m: usize) -> Matrix {
    let mut c = Matrix::zeros(m, z.ncols());
    let mut first = vec![None; m];
    for (i, &l) in labels.iter().enumerate() {
        let mut row = c.row_mut(l);
        row += z.row(i);
        first[l].get_or_insert(i);
    }
    for k in 0..m {
        let norm = c.row(k).norm();
        if norm > 1e-12 {
            let mut row = c.row_mut(k);
            row /= norm;
        } else if let Some(i) = first[k] {
            c.set_row(k, &z.row(i));
        }
    }
    c
}
