//! Masking of the orthogonal complement into diagonal blocks and
//! constant-correlation shrinkage of each block.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::Mask;
use crate::error::{Error, Result};
use crate::linalg::{center_rows, is_numerically_pd, min_eigenvalue, select_rows, submatrix, Matrix};

/// How the shrinkage intensity is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntensityConvention {
    /// Ledoit-Wolf constant-correlation estimator: misspecification measured
    /// as `sum (F - S)^2` and the clamped ratio used as the target weight.
    #[default]
    LedoitWolf,
    /// Formulas exactly as typeset in the method description: misspecification
    /// `sum F_ij^2`, no square root on the second covariance term, and the
    /// clamped ratio used as the sample weight.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShrinkageConfig {
    pub convention: IntensityConvention,
    /// Minimum target weight for blocks that are not full rank.
    pub floor: f64,
}

impl Default for ShrinkageConfig {
    fn default() -> Self {
        Self { convention: IntensityConvention::LedoitWolf, floor: 1e-3 }
    }
}

impl ShrinkageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.floor > 0.0 && self.floor < 1.0) {
            return Err(Error::Config(format!("shrinkage floor {} must be in (0, 1)", self.floor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub members: Vec<usize>,
    pub sample: Matrix,
}

/// `S ∘ C` stored as dense diagonal blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSet {
    pub p: usize,
    pub blocks: Vec<Block>,
}

impl BlockSet {
    pub fn to_matrix(&self) -> Matrix {
        assemble(self.p, self.blocks.iter().map(|b| (&b.members[..], &b.sample)))
    }
}

fn assemble<'a>(p: usize, blocks: impl Iterator<Item = (&'a [usize], &'a Matrix)>) -> Matrix {
    let mut out = Matrix::zeros(p, p);
    for (members, m) in blocks {
        for (a, &i) in members.iter().enumerate() {
            for (b, &j) in members.iter().enumerate() {
                out[(i, j)] = m[(a, b)];
            }
        }
    }
    out
}

pub fn apply_mask(s: &Matrix, mask: &Mask) -> Result<BlockSet> {
    let p = mask.dim();
    if s.shape() != (p, p) {
        return Err(Error::dims((p, p), s.shape()));
    }
    let blocks = mask
        .assignment()
        .members()
        .into_iter()
        .map(|members| Block { sample: submatrix(s, &members), members })
        .collect();
    Ok(BlockSet { p, blocks })
}

/// Mean off-diagonal correlation implied by a covariance block.
pub fn average_correlation(block: &Matrix) -> Result<f64> {
    let n = block.nrows();
    for i in 0..n {
        if !(block[(i, i)] > 0.0) {
            return Err(Error::Data(format!("block diagonal entry {i} is not positive")));
        }
    }
    if n < 2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += block[(i, j)] / (block[(i, i)] * block[(j, j)]).sqrt();
        }
    }
    Ok(2.0 * sum / (n * (n - 1)) as f64)
}

/// Same variances as `block`, covariances `r * sqrt(s_ii s_jj)` with `r` the
/// mean sample correlation.
pub fn constant_correlation_target(block: &Matrix) -> Result<Matrix> {
    let r = average_correlation(block)?;
    Ok(target_with(block, r))
}

fn target_with(block: &Matrix, r: f64) -> Matrix {
    let n = block.nrows();
    Matrix::from_fn(n, n, |i, j| {
        if i == j {
            block[(i, i)]
        } else {
            r * (block[(i, i)] * block[(j, j)]).sqrt()
        }
    })
}

/// Ingredients of the optimal shrinkage intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityStats {
    pub pi: f64,
    pub rho: f64,
    pub gamma: f64,
    pub kappa: f64,
    /// Weight on the sample block.
    pub alpha: f64,
}

/// Shrinkage intensity for one block from its residual rows (`n x T`), its
/// covariance block and target.
pub fn lw_intensity(
    block_residuals: &Matrix,
    block: &Matrix,
    target: &Matrix,
    convention: IntensityConvention,
) -> Result<IntensityStats> {
    let n = block.nrows();
    let t = block_residuals.ncols();
    if block_residuals.nrows() != n || target.shape() != block.shape() {
        return Err(Error::dims((n, t), block_residuals.shape()));
    }
    if t < 2 {
        return Err(Error::Data("shrinkage intensity needs T >= 2".into()));
    }
    let r = average_correlation(block)?;
    let tf = t as f64;
    let x = center_rows(block_residuals);
    let x2 = x.map(|v| v * v);
    let x3 = x.zip_map(&x2, |a, b| a * b);
    let xx = &x * x.transpose() / tf;
    let fourth = &x2 * x2.transpose() / tf;
    let third = &x3 * x.transpose() / tf;
    let m2: Vec<f64> = (0..n).map(|i| xx[(i, i)]).collect();

    let pi_m = Matrix::from_fn(n, n, |i, j| {
        fourth[(i, j)] - 2.0 * block[(i, j)] * xx[(i, j)] + block[(i, j)].powi(2)
    });
    let pi: f64 = pi_m.iter().sum();
    let eta = |i: usize, j: usize| {
        third[(i, j)] - block[(i, j)] * m2[i] - block[(i, i)] * xx[(i, j)] + block[(i, i)] * block[(i, j)]
    };
    let literal = convention == IntensityConvention::Literal;
    let mut rho: f64 = (0..n).map(|i| pi_m[(i, i)]).sum();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (sii, sjj) = (block[(i, i)], block[(j, j)]);
            let second = if literal { sii / sjj } else { (sii / sjj).sqrt() };
            rho += r / 2.0 * ((sjj / sii).sqrt() * eta(i, j) + second * eta(j, i));
        }
    }
    let gamma: f64 = if literal {
        target.iter().map(|v| v * v).sum()
    } else {
        target.zip_map(block, |f, s| (f - s).powi(2)).iter().sum()
    };
    let (kappa, alpha) = if gamma > 0.0 {
        let kappa = (pi - rho) / gamma;
        let w = (kappa / tf).clamp(0.0, 1.0);
        (kappa, if literal { w } else { 1.0 - w })
    } else {
        (f64::INFINITY, 1.0)
    };
    if !alpha.is_finite() {
        return Err(Error::Numerical("shrinkage intensity is not finite".into()));
    }
    Ok(IntensityStats { pi, rho, gamma, kappa, alpha })
}

/// `alpha * block + (1 - alpha) * target`, with the sample weight capped at
/// `1 - floor`.
pub fn shrink_block(block: &Matrix, target: &Matrix, alpha: f64, floor: f64) -> Matrix {
    let a = alpha.clamp(0.0, 1.0).min(1.0 - floor.clamp(0.0, 1.0));
    block * a + target * (1.0 - a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub members: Vec<usize>,
    /// Weight on the sample block.
    pub alpha: f64,
    pub floored: bool,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdiosyncraticEstimate {
    pub psi: Matrix,
    pub blocks: Vec<BlockSummary>,
    pub min_eigenvalue: f64,
}

pub struct ShrunkBlock {
    pub members: Vec<usize>,
    pub matrix: Matrix,
    pub alpha: f64,
    pub floored: bool,
}

/// Places shrunk blocks into a `p x p` matrix and certifies positive
/// definiteness from the block spectra.
pub fn assemble_psi(blocks: Vec<ShrunkBlock>, p: usize) -> Result<IdiosyncraticEstimate> {
    let mut seen = vec![false; p];
    for b in &blocks {
        for &i in &b.members {
            if i >= p || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Data(format!("block index {i} is out of range or repeated")));
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Data(format!("asset {i} is not covered by any block")));
    }
    let eigs = blocks
        .par_iter()
        .map(|b| min_eigenvalue(&b.matrix))
        .collect::<Result<Vec<f64>>>()?;
    let min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    let psi = assemble(p, blocks.iter().map(|b| (&b.members[..], &b.matrix)));
    let summaries = blocks
        .into_iter()
        .zip(eigs)
        .map(|(b, e)| BlockSummary { members: b.members, alpha: b.alpha, floored: b.floored, min_eigenvalue: e })
        .collect();
    Ok(IdiosyncraticEstimate { psi, blocks: summaries, min_eigenvalue: min })
}

/// Masks `s` and shrinks every block towards its constant-correlation target.
pub fn shrink_idiosyncratic(
    residuals: &Matrix,
    s: &Matrix,
    mask: &Mask,
    config: &ShrinkageConfig,
) -> Result<IdiosyncraticEstimate> {
    config.validate()?;
    let set = apply_mask(s, mask)?;
    if residuals.nrows() != set.p {
        return Err(Error::dims((set.p, residuals.ncols()), residuals.shape()));
    }
    let t = residuals.ncols();
    let shrunk = set
        .blocks
        .into_par_iter()
        .map(|b| {
            let n = b.members.len();
            if n == 1 {
                return Ok(ShrunkBlock { matrix: b.sample, members: b.members, alpha: 1.0, floored: false });
            }
            let target = constant_correlation_target(&b.sample)?;
            let stats = lw_intensity(&select_rows(residuals, &b.members), &b.sample, &target, config.convention)?;
            let needs_floor = n >= t || !is_numerically_pd(&b.sample);
            let floor = if needs_floor { config.floor } else { 0.0 };
            let alpha = stats.alpha.min(1.0 - floor);
            Ok(ShrunkBlock {
                matrix: shrink_block(&b.sample, &target, alpha, 0.0),
                members: b.members,
                alpha,
                floored: alpha < stats.alpha,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    assemble_psi(shrunk, set.p)
}
