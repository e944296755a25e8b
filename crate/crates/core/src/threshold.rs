//! Generalized adaptive thresholding of the orthogonal complement.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{self, CvConfig};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Conventional SCAD shape constant.
pub const SCAD_A: f64 = 3.7;
/// Conventional adaptive-lasso exponent.
pub const AL_A: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ThresholdKind {
    Hard,
    Soft,
    Al,
    Scad,
}

impl ThresholdKind {
    pub fn default_shape(self) -> f64 {
        match self {
            ThresholdKind::Scad => SCAD_A,
            ThresholdKind::Al => AL_A,
            ThresholdKind::Hard | ThresholdKind::Soft => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub kind: ThresholdKind,
    pub tau: f64,
    /// AL exponent or SCAD constant; unused by HARD and SOFT.
    pub a: f64,
}

impl ThresholdRule {
    pub fn new(kind: ThresholdKind, tau: f64, a: f64) -> Result<Self> {
        let rule = Self { kind, tau, a };
        rule.validate()?;
        Ok(rule)
    }

    pub fn with_default_shape(kind: ThresholdKind, tau: f64) -> Self {
        Self {
            kind,
            tau,
            a: kind.default_shape(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be finite and nonnegative, got {}", self.tau)));
        }
        match self.kind {
            ThresholdKind::Scad if !(self.a > 2.0) => {
                Err(Error::Config(format!("SCAD requires a > 2, got {}", self.a)))
            }
            ThresholdKind::Al if !(self.a > 0.0) => {
                Err(Error::Config(format!("adaptive lasso requires a > 0, got {}", self.a)))
            }
            _ => Ok(()),
        }
    }

    /// `f_{tau_ij}(z)` without validation.
    #[inline]
    pub fn eval(&self, z: f64, tau_ij: f64) -> f64 {
        operator(self.kind, self.a, z, tau_ij)
    }
}

#[inline]
fn soft(z: f64, t: f64) -> f64 {
    z.signum() * (z.abs() - t).max(0.0)
}

#[inline]
fn operator(kind: ThresholdKind, a: f64, z: f64, t: f64) -> f64 {
    let az = z.abs();
    match kind {
        // Strict inequality so that |z| = tau falls in the kill zone.
        ThresholdKind::Hard => {
            if az > t {
                z
            } else {
                0.0
            }
        }
        ThresholdKind::Soft => soft(z, t),
        ThresholdKind::Al => {
            if az <= t || az == 0.0 {
                0.0
            } else {
                let shrink = t * (t / az).powf(a);
                z.signum() * (az - shrink).max(0.0)
            }
        }
        ThresholdKind::Scad => {
            if az <= 2.0 * t {
                soft(z, t)
            } else if az <= a * t {
                ((a - 1.0) * z - z.signum() * a * t) / (a - 2.0)
            } else {
                z
            }
        }
    }
}

/// Applies the thresholding operator of `rule` to `z` with entry threshold
/// `tau_ij`.
pub fn apply_operator(rule: &ThresholdRule, z: f64, tau_ij: f64) -> Result<f64> {
    rule.validate()?;
    if !(tau_ij >= 0.0) {
        return Err(Error::Config(format!("entry threshold must be nonnegative, got {tau_ij}")));
    }
    if !z.is_finite() {
        return Err(Error::Data(format!("cannot threshold non-finite value {z}")));
    }
    Ok(rule.eval(z, tau_ij))
}

/// `theta_ij = T^-1 sum_t (e_it e_jt - S_ij)^2`.
pub fn theta_hat(residuals: &Matrix, s: &Matrix) -> Result<Matrix> {
    let p = residuals.nrows();
    if s.nrows() != p || s.ncols() != p {
        return Err(Error::shape(format!("{p}x{p}"), format!("{}x{}", s.nrows(), s.ncols())));
    }
    let t = residuals.ncols() as f64;
    let sq = residuals.map(|v| v * v);
    let fourth = &sq * sq.transpose();
    let cross = residuals * residuals.transpose();
    let mut theta = Matrix::zeros(p, p);
    for j in 0..p {
        for i in j..p {
            let sij = s[(i, j)];
            let v = ((fourth[(i, j)] - 2.0 * sij * cross[(i, j)]) / t + sij * sij).max(0.0);
            theta[(i, j)] = v;
            theta[(j, i)] = v;
        }
    }
    Ok(theta)
}

/// `tau_ij = tau sqrt(theta_ij log(p) / T)`.
pub fn adaptive_tau(theta: &Matrix, tau: f64, p: usize, t: usize) -> Result<Matrix> {
    if p < 2 {
        return Err(Error::Config(format!("adaptive thresholds need p >= 2, got {p}")));
    }
    if !(tau >= 0.0) {
        return Err(Error::Config(format!("tau must be nonnegative, got {tau}")));
    }
    let scale = (p as f64).ln() / t as f64;
    Ok(theta.map(|th| tau * (th.max(0.0) * scale).sqrt()))
}

/// Keeps the diagonal of `s` and thresholds every off-diagonal entry with its
/// own threshold.
pub fn threshold_complement(s: &Matrix, rule: &ThresholdRule, tau_matrix: &Matrix) -> Result<Matrix> {
    let p = linalg::ensure_square(s, "orthogonal complement")?;
    if tau_matrix.shape() != s.shape() {
        return Err(Error::shape(format!("{p}x{p}"), format!("{:?}", tau_matrix.shape())));
    }
    rule.validate()?;
    Ok(threshold_scaled(s, rule, tau_matrix, 1.0))
}

/// Thresholds with entry thresholds `scale * base`.
fn threshold_scaled(s: &Matrix, rule: &ThresholdRule, base: &Matrix, scale: f64) -> Matrix {
    let p = s.nrows();
    let mut out = Matrix::zeros(p, p);
    for j in 0..p {
        out[(j, j)] = s[(j, j)];
        for i in (j + 1)..p {
            let v = rule.eval(s[(i, j)], scale * base[(i, j)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Result of the cross-validated threshold search.
#[derive(Debug, Clone)]
pub struct TauSelection {
    pub tau: f64,
    pub psi: Matrix,
    /// Mean validation error for each grid value, in grid order.
    pub cv_errors: Vec<f64>,
    /// No grid value gave a positive-definite estimate; `psi` is the diagonal
    /// limit and `tau` the smallest value that zeroes every off-diagonal.
    pub fallback: bool,
}

/// `n` log-spaced values in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Squared Frobenius distance.
fn sq_distance(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cross-validated choice of the threshold constant. Each grid value is scored
/// by the mean squared Frobenius error between the thresholded train-fold
/// complement and the test-fold complement; the best-scoring value whose
/// full-window estimate (plus `common`, when given) is positive definite is
/// returned. Ties in error go to the larger threshold.
pub fn select_tau(
    residuals: &Matrix,
    s: &Matrix,
    kind: ThresholdKind,
    a: f64,
    grid: &[f64],
    cv_config: &CvConfig,
    common: Option<&Matrix>,
) -> Result<TauSelection> {
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    let probe = ThresholdRule::new(kind, 0.0, a)?;
    if let Some(bad) = grid.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
        return Err(Error::Config(format!("invalid threshold grid value {bad}")));
    }
    let p = linalg::ensure_square(s, "orthogonal complement")?;
    if residuals.nrows() != p {
        return Err(Error::shape(format!("{p} residual rows"), residuals.nrows()));
    }
    let t = residuals.ncols();
    let splits = cv::fold_splits(t, cv_config)?;

    let fold_errors: Vec<Vec<f64>> = splits
        .par_iter()
        .map(|split| -> Result<Vec<f64>> {
            let train = linalg::select_columns(residuals, &split.train);
            let test = linalg::select_columns(residuals, &split.test);
            let s_train = linalg::row_covariance(&train)?;
            let s_test = linalg::row_covariance(&test)?;
            let base = adaptive_tau(&theta_hat(&train, &s_train)?, 1.0, p, split.train.len())?;
            Ok(grid
                .iter()
                .map(|&tau| sq_distance(&threshold_scaled(&s_train, &probe, &base, tau), &s_test))
                .collect())
        })
        .collect::<Result<_>>()?;
    let cv_errors: Vec<f64> = (0..grid.len())
        .map(|g| fold_errors.iter().map(|f| f[g]).sum::<f64>() / splits.len() as f64)
        .collect();

    let base = adaptive_tau(&theta_hat(residuals, s)?, 1.0, p, t)?;
    let is_pd = |psi: &Matrix| match common {
        Some(c) => linalg::is_numerically_pd(&(c + psi)),
        None => linalg::is_numerically_pd(psi),
    };
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&x, &y| {
        cv_errors[x]
            .partial_cmp(&cv_errors[y])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(grid[y].partial_cmp(&grid[x]).unwrap_or(std::cmp::Ordering::Equal))
    });
    for g in order {
        let psi = threshold_scaled(s, &probe, &base, grid[g]);
        if is_pd(&psi) {
            return Ok(TauSelection {
                tau: grid[g],
                psi,
                cv_errors,
                fallback: false,
            });
        }
    }

    // Diagonal limit: the smallest tau whose kill zone covers every entry.
    let mut tau_diag = 0.0_f64;
    for j in 0..p {
        for i in (j + 1)..p {
            if base[(i, j)] > 0.0 {
                tau_diag = tau_diag.max(s[(i, j)].abs() / base[(i, j)]);
            }
        }
    }
    let psi = linalg::diagonal_part(s);
    if !is_pd(&psi) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: s.diagonal().min(),
        });
    }
    Ok(TauSelection {
        tau: tau_diag,
        psi,
        cv_errors,
        fallback: true,
    })
}
