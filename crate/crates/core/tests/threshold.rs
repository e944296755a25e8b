mod common;

use blockcov::cv::CvConfig;
use blockcov::linalg::{permute_symmetric, row_covariance, Matrix};
use blockcov::threshold::*;
use common::*;
use proptest::prelude::*;

fn rule(kind: ThresholdKind, a: f64) -> ThresholdRule {
    ThresholdRule::new(kind, 0.0, a).unwrap()
}

#[test]
fn operator_examples() {
    let soft = rule(ThresholdKind::Soft, 0.0);
    assert!((apply_operator(&soft, 0.5, 0.2).unwrap() - 0.3).abs() < 1e-15);
    let hard = rule(ThresholdKind::Hard, 0.0);
    assert_eq!(apply_operator(&hard, 0.15, 0.2).unwrap(), 0.0);
    assert_eq!(apply_operator(&hard, 0.25, 0.2).unwrap(), 0.25);
    let scad = rule(ThresholdKind::Scad, 3.7);
    assert!((apply_operator(&scad, 0.3, 0.1).unwrap() - (2.7 * 0.3 - 0.37) / 1.7).abs() < 1e-12);
    assert_eq!(apply_operator(&scad, 1.0, 0.1).unwrap(), 1.0);
    let al = rule(ThresholdKind::Al, 3.0);
    assert!((apply_operator(&al, 0.5, 0.2).unwrap() - 0.4872).abs() < 1e-12);
    assert_eq!(apply_operator(&al, 0.0, 0.0).unwrap(), 0.0);
}

#[test]
fn invalid_shapes_are_rejected() {
    assert!(ThresholdRule::new(ThresholdKind::Scad, 0.1, 2.0).is_err());
    assert!(ThresholdRule::new(ThresholdKind::Al, 0.1, 0.0).is_err());
    let soft = rule(ThresholdKind::Soft, 0.0);
    assert!(apply_operator(&soft, 0.5, -0.1).is_err());
    assert!(apply_operator(&soft, f64::NAN, 0.1).is_err());
}

fn kinds() -> impl Strategy<Value = ThresholdRule> {
    prop_oneof![
        Just(rule(ThresholdKind::Hard, 0.0)),
        Just(rule(ThresholdKind::Soft, 0.0)),
        (0.1f64..6.0).prop_map(|a| rule(ThresholdKind::Al, a)),
        (2.01f64..8.0).prop_map(|a| rule(ThresholdKind::Scad, a)),
    ]
}

proptest! {
    #[test]
    fn operator_axioms(r in kinds(), z in -5.0f64..5.0, tau in 0.0f64..3.0) {
        let f = r.eval(z, tau);
        prop_assert!(f.abs() <= z.abs());
        if z.abs() <= tau {
            prop_assert_eq!(f, 0.0);
        }
        prop_assert!((f - z).abs() <= tau + 1e-12);
        prop_assert_eq!(r.eval(-z, tau), -f);
    }

    #[test]
    fn sparsity_is_monotone(seed in 0u64..100_000, t1 in 0.0f64..3.0, t2 in 0.0f64..3.0) {
        let mut g = rng(seed);
        let e = gaussian(8, 30, &mut g);
        let s = row_covariance(&e).unwrap();
        let base = adaptive_tau(&theta_hat(&e, &s).unwrap(), 1.0, 8, 30).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        for kind in [ThresholdKind::Hard, ThresholdKind::Soft] {
            let r = rule(kind, 0.0);
            let nz = |t: f64| {
                let m = threshold_complement(&s, &r, &(&base * t)).unwrap();
                m.iter().filter(|v| **v != 0.0).count()
            };
            prop_assert!(nz(hi) <= nz(lo));
        }
    }
}

#[test]
fn theta_matches_loops() {
    let e = gaussian(5, 25, &mut rng(1));
    let s = row_covariance(&e).unwrap();
    let theta = theta_hat(&e, &s).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            let want = (0..25).map(|t| (e[(i, t)] * e[(j, t)] - s[(i, j)]).powi(2)).sum::<f64>() / 25.0;
            assert!((theta[(i, j)] - want).abs() < 1e-12);
        }
    }
    let zero = theta_hat(&Matrix::zeros(5, 25), &s).unwrap();
    assert!(max_abs_diff(&zero, &s.map(|v| v * v)) < 1e-15);
    assert!(theta_hat(&e, &Matrix::zeros(4, 4)).is_err());
}

#[test]
fn adaptive_tau_examples() {
    let theta = Matrix::from_element(3, 3, 4.0);
    assert_eq!(adaptive_tau(&theta, 0.0, 3, 10).unwrap(), Matrix::zeros(3, 3));
    let t = adaptive_tau(&theta, 0.5, 100, 250).unwrap();
    assert!((t[(0, 1)] - 0.5 * (4.0 * 100f64.ln() / 250.0).sqrt()).abs() < 1e-15);
    assert!((t[(0, 1)] - 0.13572).abs() < 1e-5);
    assert!(adaptive_tau(&theta, 0.5, 1, 10).is_err());
    assert!(adaptive_tau(&theta, -0.5, 3, 10).is_err());
}

#[test]
fn threshold_complement_cases() {
    let mut g = rng(2);
    let s = random_symmetric(6, &mut g);
    let soft = rule(ThresholdKind::Soft, 0.0);
    assert_eq!(threshold_complement(&s, &soft, &Matrix::zeros(6, 6)).unwrap(), s);
    let huge = Matrix::from_element(6, 6, 1e9);
    let d = threshold_complement(&s, &soft, &huge).unwrap();
    assert_eq!(d, Matrix::from_diagonal(&s.diagonal()));
    let taus = uniform(6, 6, 0.0, 0.8, &mut g);
    let taus = (&taus + taus.transpose()) * 0.5;
    for r in [rule(ThresholdKind::Hard, 0.0), soft, rule(ThresholdKind::Al, 3.0), rule(ThresholdKind::Scad, 3.7)] {
        let out = threshold_complement(&s, &r, &taus).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { s[(i, i)] } else { r.eval(s[(i, j)], taus[(i, j)]) };
                assert_eq!(out[(i, j)], want);
            }
        }
        let perm = [4, 0, 5, 1, 3, 2];
        let moved = threshold_complement(&permute_symmetric(&s, &perm), &r, &permute_symmetric(&taus, &perm)).unwrap();
        assert_eq!(moved, permute_symmetric(&out, &perm));
    }
}

#[test]
fn select_tau_single_huge_value_gives_diagonal() {
    let e = gaussian(10, 60, &mut rng(3));
    let s = row_covariance(&e).unwrap();
    let sel = select_tau(&e, &s, ThresholdKind::Soft, 0.0, &[1e6], &CvConfig::default(), None).unwrap();
    assert_eq!(sel.tau, 1e6);
    assert_eq!(sel.psi, Matrix::from_diagonal(&s.diagonal()));
    assert!(select_tau(&e, &s, ThresholdKind::Soft, 0.0, &[], &CvConfig::default(), None).is_err());
}

#[test]
fn select_tau_near_grid_minimum_and_pd() {
    let grid = log_grid(0.1, 4.0, 50);
    assert_eq!(grid.len(), 50);
    assert!((grid[0] - 0.1).abs() < 1e-15 && (grid[49] - 4.0).abs() < 1e-12);
    for seed in 0..5 {
        let (e, _) = planted_blocks(&[5, 5, 5, 5], 150, 0.4, &mut rng(10 + seed));
        let s = row_covariance(&e).unwrap();
        for (kind, a) in [(ThresholdKind::Soft, 0.0), (ThresholdKind::Scad, 3.7), (ThresholdKind::Al, 3.0)] {
            let sel = select_tau(&e, &s, kind, a, &grid, &CvConfig::default(), None).unwrap();
            let chosen = grid.iter().position(|g| *g == sel.tau).unwrap();
            let min = sel.cv_errors.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(sel.cv_errors[chosen] <= 1.05 * min);
            assert!(eigenvalues(&sel.psi)[0] > 0.0);
        }
    }
}
