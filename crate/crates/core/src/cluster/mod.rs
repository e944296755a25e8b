//! Block structure estimation: cluster assignments, masks, distances,
//! k-means, agglomerative clustering and the cross-validated search.

mod hierarchy;
mod kmeans;
mod select;

pub use hierarchy::{agglomerate, cut_dendrogram, Dendrogram, Linkage, Merge};
pub use kmeans::{kmeans, kmeans_standardized, KMeansConfig, KMeansResult};
pub use select::{
    select_hyperparameter, select_over_grid, ClusterMethod, EarlyStopper, GridSearch, Selection,
    SelectionConfig,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{center_rows, ensure_square, Matrix};
use crate::panel::ClassificationMap;

/// Multiplier applied to the largest finite hierarchical distance to obtain
/// the stand-in for infinite entries.
pub const DISTANCE_SENTINEL_FACTOR: f64 = 1e6;

/// A partition of `p` assets into `M` clusters. Labels are numbered by first
/// appearance, so equal partitions compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    sizes: Vec<usize>,
}

impl ClusterAssignment {
    pub fn from_labels<T: Ord + Clone>(raw: &[T]) -> Self {
        let mut map = BTreeMap::new();
        let mut sizes = Vec::new();
        let labels = raw
            .iter()
            .map(|l| {
                let next = map.len();
                let id = *map.entry(l.clone()).or_insert(next);
                if id == sizes.len() {
                    sizes.push(0);
                }
                sizes[id] += 1;
                id
            })
            .collect();
        Self { labels, sizes }
    }

    pub fn singletons(p: usize) -> Self {
        Self { labels: (0..p).collect(), sizes: vec![1; p] }
    }

    pub fn single(p: usize) -> Self {
        Self { labels: vec![0; p], sizes: if p == 0 { vec![] } else { vec![p] } }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Member indices per cluster, each in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.sizes.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// True when every cluster of `self` lies inside a cluster of `coarser`.
    pub fn refines(&self, coarser: &ClusterAssignment) -> bool {
        if self.len() != coarser.len() {
            return false;
        }
        let mut image = vec![None; self.n_clusters()];
        self.labels.iter().zip(&coarser.labels).all(|(&a, &b)| match image[a] {
            None => {
                image[a] = Some(b);
                true
            }
            Some(x) => x == b,
        })
    }
}

/// Zero-one equivalence mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    matrix: Matrix,
    assignment: ClusterAssignment,
}

impl Mask {
    /// Validates that `matrix` is a zero-one equivalence-relation matrix.
    pub fn from_matrix(matrix: Matrix) -> Result<Self> {
        let p = ensure_square(&matrix, "mask")?;
        let mut labels = vec![usize::MAX; p];
        let mut next = 0;
        for i in 0..p {
            for j in 0..p {
                let v = matrix[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Data(format!("mask entry ({i}, {j}) is {v}, expected 0 or 1")));
                }
            }
            if matrix[(i, i)] != 1.0 {
                return Err(Error::Data(format!("mask diagonal entry {i} is not 1")));
            }
            if labels[i] != usize::MAX {
                continue;
            }
            for j in i..p {
                if matrix[(i, j)] == 1.0 {
                    if labels[j] != usize::MAX {
                        return Err(Error::Data(format!("mask is not transitive at ({i}, {j})")));
                    }
                    labels[j] = next;
                }
            }
            next += 1;
        }
        for i in 0..p {
            for j in 0..p {
                if (matrix[(i, j)] == 1.0) != (labels[i] == labels[j]) {
                    return Err(Error::Data(format!(
                        "mask is not an equivalence relation at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { matrix, assignment: ClusterAssignment::from_labels(&labels) })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn assignment(&self) -> &ClusterAssignment {
        &self.assignment
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

pub fn mask_from_labels(assignment: &ClusterAssignment) -> Mask {
    let l = assignment.labels();
    let p = l.len();
    let matrix = Matrix::from_fn(p, p, |i, j| if l[i] == l[j] { 1.0 } else { 0.0 });
    Mask { matrix, assignment: assignment.clone() }
}

pub fn labels_from_mask(mask: &Mask) -> ClusterAssignment {
    mask.assignment.clone()
}

/// Mask grouping assets that share a classification code.
pub fn mask_from_classification(classes: &ClassificationMap, assets: &[String]) -> Result<Mask> {
    let codes = assets
        .iter()
        .map(|a| {
            classes
                .code(a)
                .ok_or_else(|| Error::Data(format!("asset '{a}' has no classification code")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mask_from_labels(&ClusterAssignment::from_labels(&codes)))
}

/// Rows centered and scaled to unit Euclidean norm, so that the inner product
/// of two rows is their Pearson correlation.
pub fn standardize_rows(residuals: &Matrix) -> Result<Matrix> {
    let mut z = center_rows(residuals);
    for (i, mut row) in z.row_iter_mut().enumerate() {
        let norm = row.norm();
        if !(norm > 1e-13 * residuals.row(i).norm()) {
            return Err(Error::Data(format!("residual row {i} has zero variance")));
        }
        row /= norm;
    }
    Ok(z)
}

/// `1 - r_ij` for the Pearson correlation of residual rows.
pub fn correlation_distance(residuals: &Matrix) -> Result<Matrix> {
    let z = standardize_rows(residuals)?;
    let corr = &z * z.transpose();
    let p = corr.nrows();
    Ok(Matrix::from_fn(p, p, |i, j| {
        if i == j {
            0.0
        } else {
            let r = 0.5 * (corr[(i, j)] + corr[(j, i)]);
            (1.0 - r).clamp(0.0, 2.0)
        }
    }))
}

/// Inverse threshold-ratio distance `sqrt(theta_ij log p / T) / |S_ij|`.
/// Entries where either `S_ij` or `theta_ij` vanishes are set to a large
/// finite sentinel so that linkage updates stay well defined.
pub fn hierarchical_distance(s: &Matrix, theta: &Matrix, p: usize, t: usize) -> Result<Matrix> {
    let n = ensure_square(s, "orthogonal complement")?;
    if theta.shape() != s.shape() {
        return Err(Error::dims(s.shape(), theta.shape()));
    }
    if n != p {
        return Err(Error::Data(format!("p = {p} does not match matrix dimension {n}")));
    }
    if p < 2 || t == 0 {
        return Err(Error::Data("hierarchical distance needs p >= 2 and T >= 1".into()));
    }
    let scale = (p as f64).ln() / t as f64;
    let mut d = Matrix::zeros(p, p);
    let mut max_finite: f64 = 0.0;
    let mut missing = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p {
            let sij = 0.5 * (s[(i, j)] + s[(j, i)]).abs();
            let th = 0.5 * (theta[(i, j)] + theta[(j, i)]);
            if sij == 0.0 || !(th > 0.0) {
                missing.push((i, j));
                continue;
            }
            let v = (th * scale).sqrt() / sij;
            if v.is_finite() {
                d[(i, j)] = v;
                d[(j, i)] = v;
                max_finite = max_finite.max(v);
            } else {
                missing.push((i, j));
            }
        }
    }
    let sentinel = DISTANCE_SENTINEL_FACTOR * if max_finite > 0.0 { max_finite } else { 1.0 };
    for (i, j) in missing {
        d[(i, j)] = sentinel;
        d[(j, i)] = sentinel;
    }
    Ok(d)
}
