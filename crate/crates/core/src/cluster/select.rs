use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    agglomerate, hierarchical_distance, kmeans_standardized, standardize_rows, ClusterAssignment,
    Dendrogram, KMeansConfig, Linkage,
};
use crate::cv::{fold_splits, CvConfig};
use crate::error::{Error, Result};
use crate::linalg::{row_covariance, select_columns, Matrix};
use crate::seed::derive_seed;
use crate::threshold::theta_hat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "linkage")]
pub enum ClusterMethod {
    KMeans,
    Hierarchical(Linkage),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub cv: CvConfig,
    /// Width of the moving average watched by early stopping.
    pub window: usize,
    pub kmeans_patience: usize,
    pub kmeans_tolerance: f64,
    pub hierarchical_patience: usize,
    pub hierarchical_tolerance: f64,
    pub kmeans: KMeansConfig,
    /// Upper end of the k-means grid over M (defaults to p).
    pub max_clusters: Option<usize>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            cv: CvConfig::default(),
            window: 3,
            kmeans_patience: 3,
            kmeans_tolerance: 1e-3,
            hierarchical_patience: 30,
            hierarchical_tolerance: 0.0,
            kmeans: KMeansConfig::default(),
            max_clusters: None,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        self.cv.validate()?;
        self.kmeans.validate()?;
        if self.window == 0 || self.kmeans_patience == 0 || self.hierarchical_patience == 0 {
            return Err(Error::Config("early-stopping window and patience must be positive".into()));
        }
        for tol in [self.kmeans_tolerance, self.hierarchical_tolerance] {
            if !(0.0..1.0).contains(&tol) {
                return Err(Error::Config(format!("stagnation tolerance {tol} must be in [0, 1)")));
            }
        }
        if self.max_clusters == Some(0) {
            return Err(Error::Config("max_clusters must be at least 1".into()));
        }
        Ok(())
    }

    fn stopper(&self, method: ClusterMethod) -> EarlyStopper {
        match method {
            ClusterMethod::KMeans => EarlyStopper::new(self.window, self.kmeans_patience, self.kmeans_tolerance),
            ClusterMethod::Hierarchical(_) => {
                EarlyStopper::new(self.window, self.hierarchical_patience, self.hierarchical_tolerance)
            }
        }
    }
}

/// Watches the moving average of a validation-error sequence and signals a
/// stop once it has failed to improve by a relative margin `tolerance` for
/// `patience` consecutive steps.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    window: usize,
    patience: usize,
    tolerance: f64,
    history: Vec<f64>,
    best_average: f64,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(window: usize, patience: usize, tolerance: f64) -> Self {
        Self {
            window: window.max(1),
            patience: patience.max(1),
            tolerance,
            history: Vec::new(),
            best_average: f64::INFINITY,
            stale: 0,
        }
    }

    /// Records one error and returns true when the search should stop.
    pub fn push(&mut self, error: f64) -> bool {
        self.history.push(error);
        let n = self.history.len();
        if n < self.window {
            return false;
        }
        let avg = self.history[n - self.window..].iter().sum::<f64>() / self.window as f64;
        if self.best_average.is_infinite() || avg < self.best_average - self.tolerance * self.best_average.abs() {
            self.best_average = avg;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch {
    /// Mean validation errors in evaluation order.
    pub errors: Vec<f64>,
    pub best: usize,
    pub stopped_early: bool,
}

/// Evaluates `eval(0), eval(1), ...` in order until the grid is exhausted or
/// the stopper fires, then returns the argmin. Ties go to the later index when
/// `prefer_later` is set.
pub fn select_over_grid(
    len: usize,
    mut stopper: EarlyStopper,
    prefer_later: bool,
    mut eval: impl FnMut(usize) -> Result<f64>,
) -> Result<GridSearch> {
    if len == 0 {
        return Err(Error::Data("hyperparameter grid is empty".into()));
    }
    let mut errors = Vec::new();
    let mut stopped_early = false;
    for i in 0..len {
        let e = eval(i)?;
        if !e.is_finite() {
            return Err(Error::Numerical(format!("validation error at grid point {i} is not finite")));
        }
        errors.push(e);
        if stopper.push(e) && i + 1 < len {
            stopped_early = true;
            break;
        }
    }
    let mut best = 0;
    for (i, &e) in errors.iter().enumerate().skip(1) {
        if e < errors[best] || (prefer_later && e == errors[best]) {
            best = i;
        }
    }
    Ok(GridSearch { errors, best, stopped_early })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub method: ClusterMethod,
    pub assignment: ClusterAssignment,
    /// Selected grid value: M for k-means, the number of merges for
    /// hierarchical clustering.
    pub phi: usize,
    /// Merge height of the last merge kept (hierarchical only).
    pub cutoff: Option<f64>,
    pub cv_errors: Vec<f64>,
    pub stopped_early: bool,
    pub dendrogram: Option<Dendrogram>,
}

struct Fold {
    residuals: Matrix,
    s_train: Matrix,
    /// `(S_train - S_test)^2 - S_test^2`, the error change from keeping an entry.
    gain: Matrix,
    base: f64,
}

impl Fold {
    fn error_of(&self, assignment: &ClusterAssignment) -> f64 {
        let mut e = self.base;
        for members in assignment.members() {
            for &i in &members {
                for &j in &members {
                    e += self.gain[(i, j)];
                }
            }
        }
        e
    }
}

fn build_folds(residuals: &Matrix, cv: &CvConfig) -> Result<Vec<Fold>> {
    fold_splits(residuals.ncols(), cv)?
        .into_par_iter()
        .map(|split| {
            let train = select_columns(residuals, &split.train);
            let s_train = row_covariance(&train)?;
            let s_test = row_covariance(&select_columns(residuals, &split.test))?;
            let gain = s_train.zip_map(&s_test, |a, b| (a - b).powi(2) - b * b);
            let base = s_test.iter().map(|v| v * v).sum();
            Ok(Fold { residuals: train, s_train, gain, base })
        })
        .collect()
}

/// Cross-validated choice of the cluster count (k-means) or dendrogram cut
/// (hierarchical). `s` is the full-window orthogonal complement, used for the
/// final hierarchical distance matrix.
pub fn select_hyperparameter(
    residuals: &Matrix,
    s: &Matrix,
    method: ClusterMethod,
    config: &SelectionConfig,
    seed: u64,
) -> Result<Selection> {
    config.validate()?;
    let p = residuals.nrows();
    if s.shape() != (p, p) {
        return Err(Error::dims((p, p), s.shape()));
    }
    let folds = build_folds(residuals, &config.cv)?;
    let stopper = config.stopper(method);
    match method {
        ClusterMethod::KMeans => {
            let standardized = folds
                .par_iter()
                .map(|f| standardize_rows(&f.residuals))
                .collect::<Result<Vec<_>>>()?;
            let max_m = config.max_clusters.unwrap_or(p).min(p);
            let search = select_over_grid(max_m, stopper, true, |i| {
                let m = i + 1;
                let errs = folds
                    .par_iter()
                    .zip(&standardized)
                    .enumerate()
                    .map(|(h, (fold, z))| {
                        let fit = kmeans_standardized(z, m, &config.kmeans, derive_seed(seed, &[h as u64, m as u64]))?;
                        Ok(fold.error_of(&fit.assignment))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                Ok(errs.iter().sum::<f64>() / errs.len() as f64)
            })?;
            let m = search.best + 1;
            let fit = kmeans_standardized(
                &standardize_rows(residuals)?,
                m,
                &config.kmeans,
                derive_seed(seed, &[u64::MAX, m as u64]),
            )?;
            Ok(Selection {
                method,
                assignment: fit.assignment,
                phi: m,
                cutoff: None,
                cv_errors: search.errors,
                stopped_early: search.stopped_early,
                dendrogram: None,
            })
        }
        ClusterMethod::Hierarchical(linkage) => {
            let mut cursors = folds
                .par_iter()
                .map(|f| {
                    let theta = theta_hat(&f.residuals, &f.s_train)?;
                    let d = hierarchical_distance(&f.s_train, &theta, p, f.residuals.ncols())?;
                    let dendrogram = agglomerate(&d, linkage, Some(&f.residuals))?;
                    Ok(MergeCursor::new(f, dendrogram))
                })
                .collect::<Result<Vec<_>>>()?;
            let search = select_over_grid(p, stopper, false, |k| {
                if k > 0 {
                    cursors.par_iter_mut().zip(&folds).for_each(|(c, f)| c.advance(f));
                }
                Ok(cursors.iter().map(|c| c.error).sum::<f64>() / cursors.len() as f64)
            })?;
            let theta = theta_hat(residuals, s)?;
            let d = hierarchical_distance(s, &theta, p, residuals.ncols())?;
            let dendrogram = agglomerate(&d, linkage, Some(residuals))?;
            let k = search.best;
            let cutoff = if k == 0 { 0.0 } else { dendrogram.merges[k - 1].height };
            Ok(Selection {
                method,
                assignment: dendrogram.cut_merges(k),
                phi: k,
                cutoff: Some(cutoff),
                cv_errors: search.errors,
                stopped_early: search.stopped_early,
                dendrogram: Some(dendrogram),
            })
        }
    }
}

/// Replays a fold dendrogram one merge at a time while tracking the
/// validation error incrementally.
struct MergeCursor {
    dendrogram: Dendrogram,
    members: Vec<Vec<usize>>,
    next: usize,
    error: f64,
}

impl MergeCursor {
    fn new(fold: &Fold, dendrogram: Dendrogram) -> Self {
        let p = dendrogram.n_leaves;
        let error = fold.base + (0..p).map(|i| fold.gain[(i, i)]).sum::<f64>();
        Self { members: (0..p).map(|i| vec![i]).collect(), dendrogram, next: 0, error }
    }

    fn advance(&mut self, fold: &Fold) {
        let Some(m) = self.dendrogram.merges.get(self.next).copied() else { return };
        let a = std::mem::take(&mut self.members[m.left]);
        let b = std::mem::take(&mut self.members[m.right]);
        let cross: f64 = a.iter().flat_map(|&i| b.iter().map(move |&j| fold.gain[(i, j)])).sum();
        self.error += 2.0 * cross;
        let mut joined = a;
        joined.extend(b);
        self.members.push(joined);
        self.next += 1;
    }
}
