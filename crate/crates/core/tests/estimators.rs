mod common;

use blockcov::cluster::{ClusterAssignment, ClusterMethod, SelectionConfig};
use blockcov::estimator::*;
use blockcov::factor::{FactorConfig, KPolicy};
use blockcov::linalg::{diagonal_part, permute_symmetric, select_rows, Matrix};
use blockcov::panel::{ClassificationMap, ReturnPanel};
use common::*;

fn factor_panel(p: usize, t: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    let (e, _) = planted_blocks(&[p / 5; 5], t, 0.4, &mut r);
    let f = gaussian(2, t, &mut r);
    let b = gaussian(p, 2, &mut r);
    (&b * f * 0.6 + e) * 0.01
}

fn fixed_k(k: usize) -> EstimatorConfig {
    EstimatorConfig {
        factor: FactorConfig { k_policy: KPolicy::Fixed { k }, eigen_shrinkage: true },
        ..EstimatorConfig::default()
    }
}

fn classes_for(panel: &ReturnPanel, codes: impl Fn(usize) -> usize) -> ClassificationMap {
    panel.assets().iter().enumerate().map(|(i, a)| (a.clone(), codes(i).to_string())).collect()
}

#[test]
fn diag_baseline() {
    let panel = panel(factor_panel(20, 80, 1));
    let est = estimate(&panel, Method::Diag, &fixed_k(2), None).unwrap();
    assert_eq!(est.psi, Matrix::from_diagonal(&est.psi.diagonal()));
    assert!(est.min_eigenvalue().unwrap() > 0.0);
}

#[test]
fn zero_factors_with_identity_mask_is_diagonal_sample_covariance() {
    let panel = panel(factor_panel(15, 60, 2));
    let classes = classes_for(&panel, |i| i);
    let est = estimate(&panel, Method::Csi, &fixed_k(0), Some(&classes)).unwrap();
    let cov = loop_covariance(panel.values());
    assert!(max_abs_diff(&est.sigma, &diagonal_part(&cov)) < 1e-15);
    assert!(estimate(&panel, Method::Csi, &fixed_k(0), None).is_err());
}

#[test]
fn compare_covers_every_method() {
    let panel = panel(factor_panel(50, 100, 3));
    let classes = classes_for(&panel, |i| i / 10);
    let cmp = compare(&panel, &Method::ALL, &fixed_k(2), Some(&classes)).unwrap();
    assert_eq!(cmp.estimates.len(), Method::ALL.len());
    let common = cmp.fit.common_component();
    for (m, r) in &cmp.estimates {
        let est = r.as_ref().unwrap_or_else(|e| panic!("{m}: {e}"));
        assert_eq!(est.k, 2);
        assert!(est.min_eigenvalue().unwrap() > 0.0, "{m}");
        if m.threshold_kind().is_none() {
            assert!(est.psi_min_eigenvalue > 0.0, "{m}");
        }
        assert!(max_abs_diff(&est.sigma, &(&common + &est.psi)) < 1e-10);
        assert_eq!(est.sigma, est.sigma.transpose());
        assert_eq!(est.assignment.is_some(), m.is_block());
    }
    let report = cmp.report(&panel, 0);
    assert!(report.entries.iter().all(|e| e.error.is_none() && e.metrics["min_eigenvalue"] > 0.0));

    let single = compare(&panel, &[Method::Soft], &fixed_k(2), None).unwrap();
    assert_eq!(single.report(&panel, 0).entries.len(), 1);
    assert!(compare(&panel, &[], &fixed_k(2), None).is_err());
    let without = compare(&panel, &[Method::Csi, Method::Diag], &fixed_k(2), None).unwrap();
    assert!(without.estimates[0].1.is_err() || without.estimates[1].1.is_err());
    assert!(without.get(Method::Diag).is_some());
}

#[test]
fn reports_are_reproducible() {
    let panel = panel(factor_panel(30, 90, 4));
    let methods = [Method::Csh, Method::Csk, Method::Scad];
    let cfg = EstimatorConfig { seed: 17, ..EstimatorConfig::default() };
    let a = compare(&panel, &methods, &cfg, None).unwrap().report(&panel, 17).to_json().unwrap();
    let b = compare(&panel, &methods, &cfg, None).unwrap().report(&panel, 17).to_json().unwrap();
    assert_eq!(a, b);
}

#[test]
fn deterministic_methods_are_permutation_equivariant() {
    let values = factor_panel(25, 90, 5);
    let perm: Vec<usize> = (0..25).map(|i| (i * 7 + 3) % 25).collect();
    let a = panel(values.clone());
    let b = ReturnPanel::new(
        perm.iter().map(|&i| a.assets()[i].clone()).collect(),
        a.times().to_vec(),
        select_rows(&values, &perm),
    )
    .unwrap();
    let classes = classes_for(&a, |i| i % 4);
    let cfg = fixed_k(2);
    for m in [Method::Soft, Method::Al, Method::Scad, Method::Hard, Method::Csi, Method::Diag] {
        let x = estimate(&a, m, &cfg, Some(&classes)).unwrap();
        let y = estimate(&b, m, &cfg, Some(&classes)).unwrap();
        assert!(max_abs_diff(&y.sigma, &permute_symmetric(&x.sigma, &perm)) < 1e-10, "{m}");
    }
    for m in [Method::Csh, Method::Csk] {
        let x = estimate(&a, m, &cfg, None).unwrap();
        let y = estimate(&b, m, &cfg, None).unwrap();
        let moved: Vec<usize> = perm.iter().map(|&i| x.assignment.as_ref().unwrap().labels()[i]).collect();
        if ClusterAssignment::from_labels(&moved) == *y.assignment.as_ref().unwrap() {
            assert!(max_abs_diff(&y.sigma, &permute_symmetric(&x.sigma, &perm)) < 1e-10, "{m}");
        } else {
            assert_eq!(m, Method::Csk, "hierarchical clustering should not depend on asset order");
        }
    }
}

#[test]
fn block_methods_find_planted_blocks() {
    use blockcov::simulation::{sample_panel, BlockStructure, PopulationModel, SimulationSpec, SizeScheme, Taper};
    let spec = SimulationSpec {
        p: 60,
        t: 300,
        k: 0,
        structure: BlockStructure::Full { m: 4, sizes: SizeScheme::Equal },
        taper: Taper { constant: 0.7, ..Taper::default() },
        seed: 6,
        ..SimulationSpec::default()
    };
    let model = PopulationModel::generate(&spec, 0).unwrap();
    let p = sample_panel(&model, spec.t, spec.df, &mut rng(6)).unwrap();
    for m in [Method::Csh, Method::Csk] {
        let est = estimate(&p, m, &fixed_k(0), None).unwrap();
        let ri = blockcov::evaluation::rand_index(est.assignment.as_ref().unwrap().labels(), model.labels.labels()).unwrap();
        assert!(ri > 0.95, "{m}: {ri}");
    }
}

#[test]
fn method_tags_parse() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
        assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
    }
    assert!("XYZ".parse::<Method>().is_err());
    let bad = EstimatorConfig {
        selection: SelectionConfig { window: 0, ..SelectionConfig::default() },
        ..EstimatorConfig::default()
    };
    assert!(bad.validate().is_err());
    let _ = ClusterMethod::KMeans;
}
