//! Performance measures, minimum-variance portfolios and the simulation and
//! backtest drivers.

mod backtest;
mod metrics;
mod portfolio;
mod study;

pub use backtest::{run_backtest, BacktestConfig};
pub use metrics::{
    classification_metrics, frobenius_error, paired_sign_test, rand_index, sign_counts, ClassificationMetrics,
    SparsityConfusion, DEFAULT_ZERO_TOL,
};
pub use portfolio::{gmv_weights, portfolio_risk, TRADING_DAYS};
pub use study::{run_dimension_sweep, run_simulation_study, Measure, StudyConfig};

use std::collections::BTreeMap;

use crate::cluster::ClusterAssignment;
use crate::estimator::Method;
use crate::linalg::Matrix;
use crate::report::{Observation, ReportEntry};

/// Connected components of the off-diagonal support of `psi`.
pub fn support_labels(psi: &Matrix, tol: f64) -> ClusterAssignment {
    let p = psi.nrows();
    let mut parent: Vec<usize> = (0..p).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for j in 0..p {
        for i in 0..j {
            if psi[(i, j)].abs() > tol || psi[(j, i)].abs() > tol {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let roots: Vec<usize> = (0..p).map(|i| find(&mut parent, i)).collect();
    ClusterAssignment::from_labels(&roots)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard error of the mean (0 for fewer than two values).
pub fn standard_error(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Per-method means and standard errors of every measure in `observations`.
fn summarize(methods: &[Method], observations: &[Observation]) -> Vec<ReportEntry> {
    methods
        .iter()
        .map(|&m| {
            let mut by_measure: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for o in observations.iter().filter(|o| o.method == m) {
                by_measure.entry(&o.measure).or_default().push(o.value);
            }
            let mut entry = ReportEntry::new(m);
            for (k, v) in by_measure {
                entry.metrics.insert(k.to_string(), mean(&v));
                entry.metrics.insert(format!("{k}_se"), standard_error(&v));
                entry.metrics.insert(format!("{k}_n"), v.len() as f64);
            }
            entry
        })
        .collect()
}
