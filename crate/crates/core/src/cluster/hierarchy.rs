use serde::{Deserialize, Serialize};

use super::ClusterAssignment;
use crate::error::{Error, Result};
use crate::linalg::{ensure_square, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Average,
    Weighted,
    Ward,
    Centroid,
    Median,
}

impl Linkage {
    pub const ALL: [Linkage; 5] =
        [Linkage::Average, Linkage::Weighted, Linkage::Ward, Linkage::Centroid, Linkage::Median];

    /// Whether merge heights are guaranteed to be nondecreasing.
    pub fn is_monotone(self) -> bool {
        matches!(self, Linkage::Average | Linkage::Weighted | Linkage::Ward)
    }

    /// Whether the linkage is computed from residual vectors rather than `D`.
    pub fn uses_vectors(self) -> bool {
        matches!(self, Linkage::Ward | Linkage::Centroid | Linkage::Median)
    }

    pub fn name(self) -> &'static str {
        match self {
            Linkage::Average => "average",
            Linkage::Weighted => "weighted",
            Linkage::Ward => "ward",
            Linkage::Centroid => "centroid",
            Linkage::Median => "median",
        }
    }
}

impl std::fmt::Display for Linkage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Linkage::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown linkage '{s}'")))
    }
}

/// One agglomeration step. Leaves are ids `0..p`; the cluster created by merge
/// `k` gets id `p + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub linkage: Linkage,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }

    /// Clusters formed by the merges with height strictly below `cutoff`.
    pub fn cut(&self, cutoff: f64) -> ClusterAssignment {
        self.cut_where(|k| self.merges[k].height < cutoff)
    }

    /// Clusters formed by the first `n_merges` merges.
    pub fn cut_merges(&self, n_merges: usize) -> ClusterAssignment {
        self.cut_where(|k| k < n_merges)
    }

    /// Leaf sets of the clusters joined by each merge, as `(left, right)`.
    pub fn merge_members(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        let p = self.n_leaves;
        let mut members: Vec<Vec<usize>> = (0..p).map(|i| vec![i]).collect();
        let mut out = Vec::with_capacity(self.merges.len());
        for m in &self.merges {
            let a = std::mem::take(&mut members[m.left]);
            let b = std::mem::take(&mut members[m.right]);
            let mut joined = a.clone();
            joined.extend_from_slice(&b);
            members.push(joined);
            out.push((a, b));
        }
        out
    }

    fn cut_where(&self, keep: impl Fn(usize) -> bool) -> ClusterAssignment {
        let p = self.n_leaves;
        let mut parent: Vec<usize> = (0..p).collect();
        let mut rep: Vec<usize> = (0..p).collect();
        for (k, m) in self.merges.iter().enumerate() {
            let (a, b) = (rep[m.left], rep[m.right]);
            rep.push(a);
            if keep(k) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let roots: Vec<usize> = (0..p).map(|i| find(&mut parent, i)).collect();
        ClusterAssignment::from_labels(&roots)
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

pub fn cut_dendrogram(dendrogram: &Dendrogram, cutoff: f64) -> ClusterAssignment {
    dendrogram.cut(cutoff)
}

/// Agglomerative clustering. Average and weighted linkage use the
/// Lance-Williams recursion on `d`; ward, centroid and median linkage work on
/// the rows of `residuals` in Euclidean space and require them.
/// Ties in the closest pair go to the lexicographically smallest slot pair.
pub fn agglomerate(d: &Matrix, linkage: Linkage, residuals: Option<&Matrix>) -> Result<Dendrogram> {
    let p = ensure_square(d, "distance matrix")?;
    if p == 0 {
        return Err(Error::Data("cannot cluster zero assets".into()));
    }
    if d.iter().any(|v| v.is_nan()) {
        return Err(Error::Data("distance matrix contains NaN".into()));
    }
    let mut state = if linkage.uses_vectors() {
        let x = residuals.ok_or_else(|| {
            Error::Data(format!("{linkage} linkage needs the residual vectors"))
        })?;
        if x.nrows() != p {
            return Err(Error::dims((p, x.ncols()), x.shape()));
        }
        State::vectors(x, linkage)
    } else {
        State::lance_williams(d)
    };

    let mut merges = Vec::with_capacity(p.saturating_sub(1));
    let mut active: Vec<usize> = (0..p).collect();
    while active.len() > 1 {
        let (mut bi, mut bj, mut best) = (0, 1, f64::INFINITY);
        for (x, &i) in active.iter().enumerate() {
            for &j in &active[x + 1..] {
                let v = state.dist[i * p + j];
                if v < best {
                    best = v;
                    bi = i;
                    bj = j;
                }
            }
        }
        if best.is_infinite() {
            bi = active[0];
            bj = active[1];
            best = state.dist[bi * p + bj];
        }
        let (id_i, id_j) = (state.ids[bi], state.ids[bj]);
        let size = state.sizes[bi] + state.sizes[bj];
        merges.push(Merge { left: id_i.min(id_j), right: id_i.max(id_j), height: best, size });
        active.retain(|&k| k != bj);
        state.merge(bi, bj, linkage, &active);
        state.ids[bi] = p + merges.len() - 1;
        state.sizes[bi] = size;
    }
    Ok(Dendrogram { n_leaves: p, linkage, merges })
}

struct State {
    p: usize,
    dist: Vec<f64>,
    ids: Vec<usize>,
    sizes: Vec<usize>,
    centers: Option<Matrix>,
}

impl State {
    fn lance_williams(d: &Matrix) -> Self {
        let p = d.nrows();
        let mut dist = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                dist[i * p + j] = 0.5 * (d[(i, j)] + d[(j, i)]);
            }
        }
        Self { p, dist, ids: (0..p).collect(), sizes: vec![1; p], centers: None }
    }

    fn vectors(x: &Matrix, linkage: Linkage) -> Self {
        let p = x.nrows();
        let centers = x.clone();
        let mut s = Self { p, dist: vec![0.0; p * p], ids: (0..p).collect(), sizes: vec![1; p], centers: None };
        for i in 0..p {
            for j in (i + 1)..p {
                let v = (centers.row(i) - centers.row(j)).norm() * ward_factor(linkage, 1, 1);
                s.dist[i * p + j] = v;
                s.dist[j * p + i] = v;
            }
        }
        s.centers = Some(centers);
        s
    }

    /// Merges slot `j` into slot `i` and refreshes distances from `i` to the
    /// remaining active slots.
    fn merge(&mut self, i: usize, j: usize, linkage: Linkage, active: &[usize]) {
        let p = self.p;
        let (ni, nj) = (self.sizes[i] as f64, self.sizes[j] as f64);
        match linkage {
            Linkage::Average | Linkage::Weighted => {
                for &k in active {
                    if k == i {
                        continue;
                    }
                    let (dik, djk) = (self.dist[i * p + k], self.dist[j * p + k]);
                    let v = if linkage == Linkage::Average {
                        (ni * dik + nj * djk) / (ni + nj)
                    } else {
                        0.5 * (dik + djk)
                    };
                    self.dist[i * p + k] = v;
                    self.dist[k * p + i] = v;
                }
            }
            Linkage::Ward | Linkage::Centroid | Linkage::Median => {
                let centers = self.centers.as_mut().expect("vector state");
                let merged = if linkage == Linkage::Median {
                    (centers.row(i) + centers.row(j)) * 0.5
                } else {
                    (centers.row(i) * ni + centers.row(j) * nj) / (ni + nj)
                };
                centers.set_row(i, &merged);
                let n = self.sizes[i] + self.sizes[j];
                for &k in active {
                    if k == i {
                        continue;
                    }
                    let v = (centers.row(i) - centers.row(k)).norm() * ward_factor(linkage, n, self.sizes[k]);
                    self.dist[i * p + k] = v;
                    self.dist[k * p + i] = v;
                }
            }
        }
    }
}

/// Ward distance between clusters of sizes `a` and `b` is
/// `sqrt(2ab/(a+b))` times the distance between their centroids, which makes
/// it equal to the Euclidean distance for two singletons.
fn ward_factor(linkage: Linkage, a: usize, b: usize) -> f64 {
    if linkage == Linkage::Ward {
        let (a, b) = (a as f64, b as f64);
        (2.0 * a * b / (a + b)).sqrt()
    } else {
        1.0
    }
}
