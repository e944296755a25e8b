use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Tolerance below which an entry counts as zero.
pub const DEFAULT_ZERO_TOL: f64 = 1e-12;

pub fn frobenius_error(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}

/// Support recovery counts over the strict upper triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SparsityConfusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl SparsityConfusion {
    pub fn count(estimate: &Matrix, truth: &Matrix, tol: f64) -> Result<Self> {
        if estimate.shape() != truth.shape() || !estimate.is_square() {
            return Err(Error::shape(format!("{:?}", truth.shape()), format!("{:?}", estimate.shape())));
        }
        let mut c = Self::default();
        let p = truth.nrows();
        for j in 0..p {
            for i in 0..j {
                match (estimate[(i, j)].abs() > tol, truth[(i, j)].abs() > tol) {
                    (true, true) => c.tp += 1,
                    (false, false) => c.tn += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                }
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Share of true nonzeros recovered (1 when there are none).
    pub fn tp_rate(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn tn_rate(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// Harmonic mean of precision and recall; 1 when there is nothing to find
    /// and nothing was found, 0 when nothing correct was found.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub f1: f64,
    pub accuracy: f64,
    pub tp_rate: f64,
    pub tn_rate: f64,
}

pub fn classification_metrics(estimate: &Matrix, truth: &Matrix, tol: f64) -> Result<ClassificationMetrics> {
    if !(tol >= 0.0) {
        return Err(Error::Config(format!("zero tolerance {tol} must be nonnegative")));
    }
    let c = SparsityConfusion::count(estimate, truth, tol)?;
    Ok(ClassificationMetrics { f1: c.f1(), accuracy: c.accuracy(), tp_rate: c.tp_rate(), tn_rate: c.tn_rate() })
}

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Fraction of unordered pairs on which two labelings agree.
pub fn rand_index<A: Eq + std::hash::Hash, B: Eq + std::hash::Hash>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(a.len(), b.len()));
    }
    let n = a.len() as u64;
    if n < 2 {
        return Err(Error::Data("Rand index needs at least two items".into()));
    }
    let mut joint: HashMap<(&A, &B), u64> = HashMap::new();
    let mut rows: HashMap<&A, u64> = HashMap::new();
    let mut cols: HashMap<&B, u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let together_both: u64 = joint.values().map(|&c| pairs(c)).sum();
    let together_a: u64 = rows.values().map(|&c| pairs(c)).sum();
    let together_b: u64 = cols.values().map(|&c| pairs(c)).sum();
    let total = pairs(n);
    let apart_both = total + together_both - together_a - together_b;
    Ok((together_both + apart_both) as f64 / total as f64)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// One-sided sign-test p-value `P(X >= n_plus)` for `X ~ Binomial(n, 1/2)`,
/// summed in log space.
pub fn paired_sign_test(n_plus: usize, n: usize) -> Result<f64> {
    if n_plus > n {
        return Err(Error::Data(format!("n_plus = {n_plus} exceeds n = {n}")));
    }
    if n_plus == 0 {
        return Ok(1.0);
    }
    let (n, k0) = (n as u64, n_plus as u64);
    let ln_half = -(n as f64) * std::f64::consts::LN_2;
    let mut terms = Vec::with_capacity((n - k0 + 1) as usize);
    let mut current = ln_choose(n, k0);
    for k in k0..=n {
        terms.push(current + ln_half);
        if k < n {
            current += ((n - k) as f64).ln() - ((k + 1) as f64).ln();
        }
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Ok((max + sum.ln()).exp().min(1.0))
}

/// Counts of strict wins of `reference` over `other` (ties dropped) for a
/// measure where larger is better when `higher_is_better`.
pub fn sign_counts(reference: &[f64], other: &[f64], higher_is_better: bool) -> (usize, usize) {
    let mut n_plus = 0;
    let mut n = 0;
    for (r, o) in reference.iter().zip(other) {
        if r == o {
            continue;
        }
        n += 1;
        if (r > o) == higher_is_better {
            n_plus += 1;
        }
    }
    (n_plus, n)
}
