//! Principal-component factor step: sample covariance, spectrum, shrunk
//! leading eigenvalues, factor-count selection, residual series and the
//! orthogonal complement.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::panel::ReturnPanel;

/// How the number of common factors is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KPolicy {
    Fixed { k: usize },
    BaiNg {
        #[serde(default)]
        max_k: Option<usize>,
    },
}

impl Default for KPolicy {
    fn default() -> Self {
        KPolicy::BaiNg { max_k: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorConfig {
    pub k_policy: KPolicy,
    /// Subtract `c p / T` from the leading eigenvalues.
    pub eigen_shrinkage: bool,
}

impl Default for FactorConfig {
    fn default() -> Self {
        Self {
            k_policy: KPolicy::default(),
            eigen_shrinkage: true,
        }
    }
}

/// Default upper bound on the factor count: `min(p, T, 30)`, and at most half
/// of `min(p, T)`. Near `min(p, T)` the residual variance collapses towards
/// zero and the criterion favours saturated fits on small panels.
pub fn default_max_k(p: usize, t: usize) -> usize {
    (p.min(t) / 2).clamp(1, 30)
}

/// Result of the common-component step, shared by every estimator run on
/// the same window.
#[derive(Debug, Clone)]
pub struct FactorFit {
    pub k: usize,
    /// Set when the factor count came from a panel that is reconstructed
    /// exactly by fewer factors than the search bound.
    pub k_degenerate: bool,
    pub eigenvalues: Vec<f64>,
    pub shrunk_eigenvalues: Vec<f64>,
    pub shrinkage_constant: f64,
    pub eigenvectors: Matrix,
    /// `p x K`, column `i` is `sqrt(lambda_i) * gamma_i`.
    pub loadings: Matrix,
    pub sample_cov: Matrix,
    /// `p x T` residual series of the centered panel.
    pub residuals: Matrix,
    pub ortho_complement: Matrix,
    pub n_periods: usize,
}

impl FactorFit {
    pub fn n_assets(&self) -> usize {
        self.sample_cov.nrows()
    }

    /// Low-rank part `sum_i lambda^S_i gamma_i gamma_i'`.
    pub fn common_component(&self) -> Matrix {
        low_rank(&self.eigenvectors, &self.shrunk_eigenvalues, self.k)
    }

    pub fn summary(&self) -> serde_json::Value {
        json!({
            "k": self.k,
            "k_degenerate": self.k_degenerate,
            "shrinkage_constant": self.shrinkage_constant,
            "eigenvalues": self.eigenvalues.iter().take(self.k.max(1) + 5).collect::<Vec<_>>(),
            "shrunk_eigenvalues": self.shrunk_eigenvalues.iter().take(self.k).collect::<Vec<_>>(),
        })
    }
}

fn low_rank(vectors: &Matrix, values: &[f64], k: usize) -> Matrix {
    let p = vectors.nrows();
    if k == 0 {
        return Matrix::zeros(p, p);
    }
    let lead = vectors.columns(0, k);
    let mut scaled = lead.into_owned();
    for (i, mut col) in scaled.column_iter_mut().enumerate() {
        col *= values[i];
    }
    let mut out = scaled * lead.transpose();
    linalg::symmetrize(&mut out);
    out
}

/// `(T-1)`-denominator sample covariance of the panel's rows.
pub fn sample_covariance(panel: &ReturnPanel) -> Result<Matrix> {
    linalg::row_covariance(panel.values())
}

/// Eigenvalues in nonincreasing order with orthonormal eigenvectors.
pub fn spectral_decompose(cov: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    linalg::sym_eigen(cov)
}

/// `max(lambda - c p / T, 0)`.
pub fn shrunk_value(lambda: f64, c: f64, p: usize, t: usize) -> f64 {
    (lambda - c * p as f64 / t as f64).max(0.0)
}

/// Shrinks the `k` leading eigenvalues by `c p / T` with
/// `c = (tr - sum_{i<=k} lambda_i) / (p - k - p k / T)`. Eigenvalues past `k`
/// are returned unchanged.
pub fn shrink_eigenvalues(eigenvalues: &[f64], k: usize, p: usize, t: usize) -> Result<(Vec<f64>, f64)> {
    if eigenvalues.len() != p {
        return Err(Error::shape(format!("{p} eigenvalues"), eigenvalues.len()));
    }
    if k >= p.min(t) {
        return Err(Error::Config(format!("factor count {k} must be below min(p, T) = {}", p.min(t))));
    }
    let (pf, tf, kf) = (p as f64, t as f64, k as f64);
    let denom = pf - kf - pf * kf / tf;
    if denom <= 0.0 {
        return Err(Error::Numerical(format!(
            "eigenvalue shrinkage denominator p - K - pK/T = {denom} is not positive"
        )));
    }
    let trace: f64 = eigenvalues.iter().sum();
    let lead: f64 = eigenvalues[..k].iter().sum();
    let c = ((trace - lead) / denom).max(0.0);
    let shrunk = eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| if i < k { shrunk_value(l, c, p, t) } else { l })
        .collect();
    Ok((shrunk, c))
}

/// Outcome of the information-criterion search.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorCount {
    pub k: usize,
    /// The panel is reproduced exactly by `k` factors; the criterion was not
    /// evaluated past that point.
    pub degenerate: bool,
    /// Criterion values for `0..=k_searched`.
    pub criterion: Vec<f64>,
    /// Mean squared reconstruction error `V(k)` for the same range.
    pub reconstruction_error: Vec<f64>,
}

/// Bai-Ng IC1 from the spectrum of the sample covariance of a `p x T` panel:
/// `argmin_k ln V(k) + k (p + T)/(pT) ln(pT/(p + T))`, ties to the smaller `k`.
pub fn bai_ng_from_eigenvalues(eigenvalues: &[f64], p: usize, t: usize, max_k: usize) -> Result<FactorCount> {
    if max_k == 0 || max_k > p.min(t) {
        return Err(Error::Config(format!("max_k must lie in 1..={}, got {max_k}", p.min(t))));
    }
    let (pf, tf) = (p as f64, t as f64);
    let penalty = (pf + tf) / (pf * tf) * (pf * tf / (pf + tf)).ln();
    let total: f64 = eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let zero_tol = 1e-13 * total.max(f64::MIN_POSITIVE);
    let mut tail = total;
    let mut criterion = Vec::with_capacity(max_k + 1);
    let mut errors = Vec::with_capacity(max_k + 1);
    let mut best = (f64::INFINITY, 0);
    for k in 0..=max_k {
        if k > 0 {
            tail -= eigenvalues[k - 1].max(0.0);
        }
        let v = tail.max(0.0) * (tf - 1.0) / (pf * tf);
        errors.push(v);
        if tail <= zero_tol {
            criterion.push(f64::NEG_INFINITY);
            return Ok(FactorCount {
                k,
                degenerate: true,
                criterion,
                reconstruction_error: errors,
            });
        }
        let ic = v.ln() + k as f64 * penalty;
        criterion.push(ic);
        if ic < best.0 {
            best = (ic, k);
        }
    }
    Ok(FactorCount {
        k: best.1,
        degenerate: false,
        criterion,
        reconstruction_error: errors,
    })
}

/// Bai-Ng factor count for a panel.
pub fn estimate_num_factors(panel: &ReturnPanel, max_k: usize) -> Result<FactorCount> {
    let cov = sample_covariance(panel)?;
    let (vals, _) = spectral_decompose(&cov)?;
    bai_ng_from_eigenvalues(&vals, panel.n_assets(), panel.n_periods(), max_k)
}

/// `E = Y_c - sum_{i<=k} gamma_i gamma_i' Y_c` for the row-centered panel `Y_c`.
pub fn residual_panel(values: &Matrix, eigenvectors: &Matrix, k: usize) -> Result<Matrix> {
    let p = values.nrows();
    if eigenvectors.nrows() != p {
        return Err(Error::shape(format!("{p} eigenvector rows"), eigenvectors.nrows()));
    }
    if k > p || k > eigenvectors.ncols() {
        return Err(Error::Config(format!("factor count {k} exceeds dimension {p}")));
    }
    let centered = linalg::center_rows(values);
    if k == 0 {
        return Ok(centered);
    }
    let lead = eigenvectors.columns(0, k);
    let scores = lead.transpose() * &centered;
    Ok(&centered - lead * scores)
}

/// `S = Sigma_s - sum_{i<=k} lambda^S_i gamma_i gamma_i'`.
pub fn orthogonal_complement(sample_cov: &Matrix, shrunk_eigenvalues: &[f64], eigenvectors: &Matrix, k: usize) -> Result<Matrix> {
    let p = linalg::ensure_square(sample_cov, "sample covariance")?;
    if eigenvectors.nrows() != p || shrunk_eigenvalues.len() < k || eigenvectors.ncols() < k {
        return Err(Error::shape(
            format!("{p}x{p} eigenvectors and at least {k} eigenvalues"),
            format!("{}x{} and {}", eigenvectors.nrows(), eigenvectors.ncols(), shrunk_eigenvalues.len()),
        ));
    }
    if k > p {
        return Err(Error::Config(format!("factor count {k} exceeds dimension {p}")));
    }
    let mut s = sample_cov - low_rank(eigenvectors, shrunk_eigenvalues, k);
    linalg::symmetrize(&mut s);
    Ok(s)
}

/// Runs the full factor step on one estimation window.
pub fn fit_factors(panel: &ReturnPanel, config: &FactorConfig) -> Result<FactorFit> {
    let (p, t) = (panel.n_assets(), panel.n_periods());
    let sample_cov = sample_covariance(panel)?;
    let (eigenvalues, eigenvectors) = spectral_decompose(&sample_cov)?;
    let (k, k_degenerate) = match config.k_policy {
        KPolicy::Fixed { k } => (k, false),
        KPolicy::BaiNg { max_k } => {
            let max_k = max_k.unwrap_or_else(|| default_max_k(p, t)).min(p.min(t) - 1).max(1);
            let count = bai_ng_from_eigenvalues(&eigenvalues, p, t, max_k)?;
            (count.k, count.degenerate)
        }
    };
    if k >= p.min(t) {
        return Err(Error::Config(format!("factor count {k} must be below min(p, T) = {}", p.min(t))));
    }
    let (shrunk_eigenvalues, shrinkage_constant) = if config.eigen_shrinkage {
        shrink_eigenvalues(&eigenvalues, k, p, t)?
    } else {
        (eigenvalues.clone(), 0.0)
    };
    let residuals = residual_panel(panel.values(), &eigenvectors, k)?;
    let ortho_complement = orthogonal_complement(&sample_cov, &shrunk_eigenvalues, &eigenvectors, k)?;
    let mut loadings = eigenvectors.columns(0, k).into_owned();
    for (i, mut col) in loadings.column_iter_mut().enumerate() {
        col *= eigenvalues[i].max(0.0).sqrt();
    }
    Ok(FactorFit {
        k,
        k_degenerate,
        eigenvalues,
        shrunk_eigenvalues,
        shrinkage_constant,
        eigenvectors,
        loadings,
        sample_cov,
        residuals,
        ortho_complement,
        n_periods: t,
    })
}
