#![allow(dead_code)]

use blockcov::linalg::Matrix;
use blockcov::panel::ReturnPanel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Random symmetric positive-definite matrix `A A' / n + eps I`.
pub fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let a = gaussian(n, n + 3, rng);
    let mut m = &a * a.transpose() / (n + 3) as f64;
    for i in 0..n {
        m[(i, i)] += 0.05;
    }
    m
}

pub fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let a = gaussian(n, n, rng);
    (&a + a.transpose()) * 0.5
}

pub fn panel(values: Matrix) -> ReturnPanel {
    ReturnPanel::from_matrix(values).unwrap()
}

/// Rows drawn as `sqrt(rho) * g_block + sqrt(1 - rho) * noise` so that rows in
/// the same block have correlation `rho` and rows in different blocks are
/// independent.
pub fn planted_blocks(sizes: &[usize], t: usize, rho: f64, rng: &mut ChaCha8Rng) -> (Matrix, Vec<usize>) {
    let p: usize = sizes.iter().sum();
    let mut labels = Vec::with_capacity(p);
    for (b, &n) in sizes.iter().enumerate() {
        labels.extend(std::iter::repeat_n(b, n));
    }
    let common = gaussian(sizes.len(), t, rng);
    let noise = gaussian(p, t, rng);
    let m = Matrix::from_fn(p, t, |i, s| rho.sqrt() * common[(labels[i], s)] + (1.0 - rho).sqrt() * noise[(i, s)]);
    (m, labels)
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Pearson correlation computed directly.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn row(m: &Matrix, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// Sample covariance by explicit loops, `(T-1)` denominator.
pub fn loop_covariance(m: &Matrix) -> Matrix {
    let (p, t) = m.shape();
    let means: Vec<f64> = (0..p).map(|i| m.row(i).sum() / t as f64).collect();
    Matrix::from_fn(p, p, |i, j| {
        (0..t).map(|s| (m[(i, s)] - means[i]) * (m[(j, s)] - means[j])).sum::<f64>() / (t - 1) as f64
    })
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}
