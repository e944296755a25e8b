//! Population models with a low-rank common part and block-diagonal tapered
//! idiosyncratic covariance, and heavy-tailed panels drawn from them.

use nalgebra::Cholesky;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, symmetrize, Matrix};
use crate::panel::ReturnPanel;
use crate::seed::rng_for;

/// Within-block correlation `constant * base^(exponent * |j - k|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Taper {
    pub constant: f64,
    pub base: f64,
    pub exponent: f64,
}

impl Default for Taper {
    fn default() -> Self {
        Self { constant: 0.3, base: 0.9, exponent: 0.1 }
    }
}

impl Taper {
    pub fn validate(&self) -> Result<()> {
        if !(self.constant > 0.0 && self.constant < 1.0) {
            return Err(Error::Config(format!("taper constant {} must be in (0, 1)", self.constant)));
        }
        if !(self.base > 0.0 && self.base <= 1.0) {
            return Err(Error::Config(format!("taper base {} must be in (0, 1]", self.base)));
        }
        if !(self.exponent >= 0.0 && self.exponent.is_finite()) {
            return Err(Error::Config(format!("taper exponent {} must be nonnegative", self.exponent)));
        }
        Ok(())
    }

    pub fn correlation(&self, lag: usize) -> f64 {
        self.constant * self.base.powf(self.exponent * lag as f64)
    }
}

/// How the full block structure splits `p` assets into `m` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeScheme {
    /// Uniform random composition of `p` into `m` positive parts.
    Composition,
    /// Each asset joins one of the `m` blocks uniformly at random (redrawn
    /// until no block is empty), giving sizes near `p / m`.
    #[default]
    Multinomial,
    /// Sizes `p / m`, with the remainder spread over the first blocks.
    Equal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BlockStructure {
    /// `m` contiguous blocks.
    Full {
        m: usize,
        #[serde(default)]
        sizes: SizeScheme,
    },
    /// Components of a random graph where each asset links to one other asset
    /// with probability `connect_prob`.
    Partial { connect_prob: f64 },
}

impl Default for BlockStructure {
    fn default() -> Self {
        BlockStructure::Full { m: 10, sizes: SizeScheme::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSpec {
    pub p: usize,
    pub t: usize,
    pub k: usize,
    pub structure: BlockStructure,
    pub taper: Taper,
    /// Defaults to `(0.25 / sqrt(i))^2` for `i = 1..=k`.
    pub factor_variances: Option<Vec<f64>>,
    pub df: f64,
    pub reps: usize,
    pub seed: u64,
    /// Idiosyncratic variances are drawn uniformly from this range times a
    /// base level.
    pub variance_range: (f64, f64),
    /// Base level as a fraction of `lambda_K(BB') / lambda_max(R)`.
    pub variance_ratio: f64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            p: 300,
            t: 250,
            k: 5,
            structure: BlockStructure::default(),
            taper: Taper::default(),
            factor_variances: None,
            df: 5.0,
            reps: 25,
            seed: 0,
            variance_range: (0.5, 1.5),
            variance_ratio: 0.5,
        }
    }
}

pub fn default_factor_variances(k: usize) -> Vec<f64> {
    (1..=k).map(|i| (0.25 / (i as f64).sqrt()).powi(2)).collect()
}

impl SimulationSpec {
    pub fn factor_variances(&self) -> Vec<f64> {
        self.factor_variances.clone().unwrap_or_else(|| default_factor_variances(self.k))
    }

    pub fn validate(&self) -> Result<()> {
        self.taper.validate()?;
        if self.p < 2 || self.t < 3 {
            return Err(Error::Config(format!("need p >= 2 and T >= 3, got p = {}, T = {}", self.p, self.t)));
        }
        if self.k > self.p {
            return Err(Error::Config(format!("K = {} exceeds p = {}", self.k, self.p)));
        }
        let v = self.factor_variances();
        if v.len() != self.k {
            return Err(Error::Config(format!("expected {} factor variances, got {}", self.k, v.len())));
        }
        if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) || v.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Config("factor variances must be positive and nonincreasing".into()));
        }
        if !(self.df > 2.0) {
            return Err(Error::Config(format!("degrees of freedom {} must exceed 2", self.df)));
        }
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        let (lo, hi) = self.variance_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) || !(self.variance_ratio > 0.0 && self.variance_ratio.is_finite()) {
            return Err(Error::Config("idiosyncratic variance range and ratio must be positive".into()));
        }
        match self.structure {
            BlockStructure::Full { m, .. } if m == 0 || m > self.p => {
                Err(Error::Config(format!("cluster count {m} must be in 1..={}", self.p)))
            }
            BlockStructure::Partial { connect_prob } if !(0.0..=1.0).contains(&connect_prob) => {
                Err(Error::Config(format!("connect probability {connect_prob} must be in [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PopulationModel {
    pub loadings: Matrix,
    pub common: Matrix,
    pub psi: Matrix,
    pub sigma: Matrix,
    pub labels: ClusterAssignment,
}

impl PopulationModel {
    pub fn new(loadings: Matrix, psi: Matrix, labels: ClusterAssignment) -> Result<Self> {
        let p = psi.nrows();
        if loadings.nrows() != p || psi.ncols() != p || labels.len() != p {
            return Err(Error::shape(p, loadings.nrows()));
        }
        let mut common = &loadings * loadings.transpose();
        symmetrize(&mut common);
        let sigma = &common + &psi;
        Ok(Self { loadings, common, psi, sigma, labels })
    }

    /// Draws the model for repetition `rep` of `spec`.
    pub fn generate(spec: &SimulationSpec, rep: usize) -> Result<Self> {
        spec.validate()?;
        let rep = rep as u64;
        let loadings = generate_loadings(spec.p, spec.k, &spec.factor_variances(), &mut rng_for(spec.seed, &[rep, 1]))?;
        let mut rng = rng_for(spec.seed, &[rep, 2]);
        let labels = match spec.structure {
            BlockStructure::Full { m, sizes } => full_block_labels(spec.p, m, sizes, &mut rng)?,
            BlockStructure::Partial { connect_prob } => partial_block_labels(spec.p, connect_prob, &mut rng).0,
        };
        let r = block_correlation(&labels, &spec.taper);
        let common_eigs = if spec.k > 0 {
            sym_eigen(&(&loadings.transpose() * &loadings))?.0
        } else {
            vec![1.0]
        };
        let lambda_k = *common_eigs.last().expect("nonempty");
        let lambda_r = sym_eigen(&r)?.0[0];
        let base = spec.variance_ratio * lambda_k / lambda_r;
        let (lo, hi) = spec.variance_range;
        let mut vrng = rng_for(spec.seed, &[rep, 3]);
        let variances: Vec<f64> = (0..spec.p).map(|_| base * vrng.random_range(lo..=hi)).collect();
        let psi = covariance_from_correlation(&r, &variances)?;
        Self::new(loadings, psi, labels)
    }
}

/// Orthonormal random loadings scaled so that column one averages 1, then
/// column `i` scaled by `sqrt(variances[i])`.
pub fn generate_loadings(p: usize, k: usize, variances: &[f64], rng: &mut ChaCha8Rng) -> Result<Matrix> {
    if k > p {
        return Err(Error::Config(format!("K = {k} exceeds p = {p}")));
    }
    if variances.len() != k {
        return Err(Error::shape(k, variances.len()));
    }
    if k == 0 {
        return Ok(Matrix::zeros(p, 0));
    }
    // The first column is drawn around 1 so that its orthonormalized mean is
    // bounded away from zero.
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let raw = Matrix::from_fn(p, k, |_, j| normal.sample(rng) + if j == 0 { 1.0 } else { 0.0 });
    let mut q = raw.qr().q();
    let mean = q.column(0).mean();
    if mean.abs() < 1e-8 {
        return Err(Error::Numerical("first loading column has zero mean".into()));
    }
    q /= mean;
    for (j, mut col) in q.column_iter_mut().enumerate() {
        col *= variances[j].sqrt();
    }
    Ok(q)
}

/// Correlation matrix of one tapered block.
pub fn tapered_block(size: usize, taper: &Taper) -> Matrix {
    Matrix::from_fn(size, size, |j, k| if j == k { 1.0 } else { taper.correlation(j.abs_diff(k)) })
}

/// Correlation matrix with a tapered block per cluster. Positions within a
/// block follow ascending asset index.
pub fn block_correlation(labels: &ClusterAssignment, taper: &Taper) -> Matrix {
    let p = labels.len();
    let mut r = Matrix::identity(p, p);
    for members in labels.members() {
        for (a, &i) in members.iter().enumerate() {
            for (b, &j) in members.iter().enumerate() {
                if a != b {
                    r[(i, j)] = taper.correlation(a.abs_diff(b));
                }
            }
        }
    }
    r
}

pub fn covariance_from_correlation(r: &Matrix, variances: &[f64]) -> Result<Matrix> {
    let p = r.nrows();
    if variances.len() != p {
        return Err(Error::shape(p, variances.len()));
    }
    let sd: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
    Ok(Matrix::from_fn(p, p, |i, j| r[(i, j)] * sd[i] * sd[j]))
}

/// `m` contiguous blocks with sizes drawn according to `scheme`.
pub fn full_block_labels(p: usize, m: usize, scheme: SizeScheme, rng: &mut ChaCha8Rng) -> Result<ClusterAssignment> {
    if m == 0 || m > p {
        return Err(Error::Config(format!("cannot split {p} assets into {m} nonempty blocks")));
    }
    let sizes = block_sizes(p, m, scheme, rng)?;
    let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, &n)| std::iter::repeat_n(b, n)).collect();
    Ok(ClusterAssignment::from_labels(&labels))
}

fn block_sizes(p: usize, m: usize, scheme: SizeScheme, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    match scheme {
        SizeScheme::Equal => Ok((0..m).map(|b| p / m + usize::from(b < p % m)).collect()),
        SizeScheme::Composition => {
            let mut cuts: Vec<usize> = sample(rng, p - 1, m - 1).into_iter().map(|c| c + 1).collect();
            cuts.sort_unstable();
            cuts.push(p);
            let mut prev = 0;
            Ok(cuts
                .into_iter()
                .map(|c| {
                    let n = c - prev;
                    prev = c;
                    n
                })
                .collect())
        }
        SizeScheme::Multinomial => {
            for _ in 0..10_000 {
                let mut sizes = vec![0; m];
                for _ in 0..p {
                    sizes[rng.random_range(0..m)] += 1;
                }
                if sizes.iter().all(|&n| n > 0) {
                    return Ok(sizes);
                }
            }
            Err(Error::Config(format!("could not draw {m} nonempty blocks from {p} assets; use equal sizes")))
        }
    }
}

/// Random graph components. Returns the labels and the sampled edges.
pub fn partial_block_labels(p: usize, connect_prob: f64, rng: &mut ChaCha8Rng) -> (ClusterAssignment, Vec<(usize, usize)>) {
    let mut parent: Vec<usize> = (0..p).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut edges = Vec::new();
    for i in 0..p {
        if p > 1 && rng.random::<f64>() < connect_prob {
            let mut j = rng.random_range(0..p - 1);
            if j >= i {
                j += 1;
            }
            edges.push((i, j));
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let roots: Vec<usize> = (0..p).map(|i| find(&mut parent, i)).collect();
    (ClusterAssignment::from_labels(&roots), edges)
}

pub fn generate_full_block_psi(
    p: usize,
    m: usize,
    scheme: SizeScheme,
    taper: &Taper,
    variances: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(Matrix, ClusterAssignment)> {
    taper.validate()?;
    let labels = full_block_labels(p, m, scheme, rng)?;
    let psi = covariance_from_correlation(&block_correlation(&labels, taper), variances)?;
    Ok((psi, labels))
}

pub fn generate_partial_block_psi(
    p: usize,
    connect_prob: f64,
    taper: &Taper,
    variances: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(Matrix, ClusterAssignment)> {
    taper.validate()?;
    if !(0.0..=1.0).contains(&connect_prob) {
        return Err(Error::Config(format!("connect probability {connect_prob} must be in [0, 1]")));
    }
    let labels = partial_block_labels(p, connect_prob, rng).0;
    let psi = covariance_from_correlation(&block_correlation(&labels, taper), variances)?;
    Ok((psi, labels))
}

/// Draws `T` periods of `Y = B F + e` with unit-variance Student-t factors and
/// innovations, so that the population covariance is `model.sigma`.
pub fn sample_panel(model: &PopulationModel, t: usize, df: f64, rng: &mut ChaCha8Rng) -> Result<ReturnPanel> {
    if !(df > 2.0) {
        return Err(Error::Config(format!("degrees of freedom {df} must exceed 2")));
    }
    let p = model.psi.nrows();
    let k = model.loadings.ncols();
    let chol = Cholesky::new(model.psi.clone())
        .ok_or(Error::NotPositiveDefinite { min_eigenvalue: f64::NAN })?;
    let dist = StudentT::new(df).map_err(|e| Error::Config(e.to_string()))?;
    let scale = ((df - 2.0) / df).sqrt();
    let f = Matrix::from_fn(k, t, |_, _| dist.sample(rng) * scale);
    let z = Matrix::from_fn(p, t, |_, _| dist.sample(rng) * scale);
    let y = &model.loadings * f + chol.l() * z;
    ReturnPanel::from_matrix(y)
}
