mod common;

use blockcov::cluster::*;
use blockcov::linalg::{row_covariance, Matrix};
use blockcov::panel::ClassificationMap;
use blockcov::threshold::theta_hat;
use common::*;
use proptest::prelude::*;

#[test]
fn correlation_distance_matches_pearson() {
    let mut r = rng(1);
    let e = gaussian(12, 40, &mut r);
    let d = correlation_distance(&e).unwrap();
    for i in 0..12 {
        assert_eq!(d[(i, i)], 0.0);
        for j in 0..12 {
            if i != j {
                let want = 1.0 - pearson(&row(&e, i), &row(&e, j));
                assert!((d[(i, j)] - want).abs() < 1e-12);
                assert_eq!(d[(i, j)], d[(j, i)]);
            }
        }
    }
}

#[test]
fn correlation_distance_extremes() {
    let x: Vec<f64> = (0..20).map(|t| (t as f64 * 0.7).sin()).collect();
    let e = Matrix::from_fn(3, 20, |i, t| match i {
        0 => x[t],
        1 => -2.0 * x[t] + 1.0,
        _ => 3.0 * x[t],
    });
    let d = correlation_distance(&e).unwrap();
    assert!((d[(0, 1)] - 2.0).abs() < 1e-12);
    assert!(d[(0, 2)].abs() < 1e-12);
}

#[test]
fn correlation_distance_rejects_constant_row() {
    let mut e = gaussian(3, 10, &mut rng(2));
    for t in 0..10 {
        e[(1, t)] = 0.25;
    }
    assert!(correlation_distance(&e).is_err());
}

#[test]
fn correlation_distance_is_scale_free() {
    let e = gaussian(8, 30, &mut rng(3));
    let a = correlation_distance(&e).unwrap();
    let b = correlation_distance(&(&e * 37.5)).unwrap();
    assert!(max_abs_diff(&a, &b) < 1e-12);
}

#[test]
fn hierarchical_distance_formula_and_sentinel() {
    let mut r = rng(4);
    let p = 9;
    let t = 50;
    let e = gaussian(p, t, &mut r);
    let mut s = row_covariance(&e).unwrap();
    s[(0, 1)] = 0.0;
    s[(1, 0)] = 0.0;
    let theta = theta_hat(&e, &s).unwrap();
    let d = hierarchical_distance(&s, &theta, p, t).unwrap();
    let mut max_finite: f64 = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i == j {
                assert_eq!(d[(i, j)], 0.0);
            } else if (i, j) != (0, 1) && (i, j) != (1, 0) {
                let ratio = s[(i, j)].abs() / (theta[(i, j)] * (p as f64).ln() / t as f64).sqrt();
                assert!((d[(i, j)] - 1.0 / ratio).abs() < 1e-12 * d[(i, j)].max(1.0));
                max_finite = max_finite.max(d[(i, j)]);
            }
        }
    }
    assert_eq!(d[(0, 1)], DISTANCE_SENTINEL_FACTOR * max_finite);
    assert_eq!(d[(1, 0)], d[(0, 1)]);
}

#[test]
fn hierarchical_distance_unit_ratio() {
    let p = 3;
    let t = 20;
    let theta = Matrix::from_element(p, p, 0.5);
    let level = (0.5 * (p as f64).ln() / t as f64).sqrt();
    let s = Matrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { level });
    let d = hierarchical_distance(&s, &theta, p, t).unwrap();
    assert!((d[(0, 1)] - 1.0).abs() < 1e-12);
}

#[test]
fn hierarchical_distance_invariant_to_common_scale() {
    let e = gaussian(7, 60, &mut rng(5));
    let f = |e: &Matrix| {
        let s = row_covariance(e).unwrap();
        let th = theta_hat(e, &s).unwrap();
        hierarchical_distance(&s, &th, 7, 60).unwrap()
    };
    let a = f(&e);
    let b = f(&(&e * 4.0));
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
    }
}

#[test]
fn mask_shapes() {
    let id = mask_from_labels(&ClusterAssignment::singletons(4));
    assert_eq!(id.matrix(), &Matrix::identity(4, 4));
    let ones = mask_from_labels(&ClusterAssignment::single(4));
    assert_eq!(ones.matrix(), &Matrix::from_element(4, 4, 1.0));
    let m = mask_from_labels(&ClusterAssignment::from_labels(&[0, 0, 1]));
    let want = Matrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    assert_eq!(m.matrix(), &want);
}

#[test]
fn classification_mask() {
    let assets: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let distinct: ClassificationMap = [("a", "10"), ("b", "20"), ("c", "30")].into_iter().collect();
    assert_eq!(mask_from_classification(&distinct, &assets).unwrap().matrix(), &Matrix::identity(3, 3));
    let same: ClassificationMap = [("a", "10"), ("b", "10"), ("c", "10")].into_iter().collect();
    assert_eq!(mask_from_classification(&same, &assets).unwrap().matrix(), &Matrix::from_element(3, 3, 1.0));
    let mixed: ClassificationMap = [("a", "7"), ("b", "7"), ("c", "3")].into_iter().collect();
    let m = mask_from_classification(&mixed, &assets).unwrap();
    assert_eq!(m.matrix(), mask_from_labels(&ClusterAssignment::from_labels(&[0, 0, 1])).matrix());
    let partial: ClassificationMap = [("a", "7"), ("b", "7")].into_iter().collect();
    assert!(mask_from_classification(&partial, &assets).is_err());
}

#[test]
fn mask_validation() {
    let bad = Matrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
    assert!(Mask::from_matrix(bad).is_err());
    let asym = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    assert!(Mask::from_matrix(asym).is_err());
    let half = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    assert!(Mask::from_matrix(half).is_err());
    let zero_diag = Matrix::zeros(2, 2);
    assert!(Mask::from_matrix(zero_diag).is_err());
}

proptest! {
    #[test]
    fn mask_round_trip(raw in proptest::collection::vec(0usize..5, 1..25)) {
        let a = ClusterAssignment::from_labels(&raw);
        let m = mask_from_labels(&a);
        let back = labels_from_mask(&Mask::from_matrix(m.matrix().clone()).unwrap());
        prop_assert_eq!(&back, &a);
        let again = mask_from_labels(&back);
        prop_assert_eq!(again.matrix(), m.matrix());
        prop_assert_eq!(a.sizes().iter().sum::<usize>(), raw.len());
        let max = *a.labels().iter().max().unwrap();
        prop_assert_eq!(max + 1, a.n_clusters());
    }
}

#[test]
fn kmeans_trivial_counts() {
    let e = gaussian(9, 30, &mut rng(6));
    let one = kmeans(&e, 1, &KMeansConfig::default(), 0).unwrap();
    assert_eq!(one.assignment, ClusterAssignment::single(9));
    let all = kmeans(&e, 9, &KMeansConfig::default(), 0).unwrap();
    assert_eq!(all.assignment, ClusterAssignment::singletons(9));
    assert!(all.loss.abs() < 1e-12);
    assert!(kmeans(&e, 10, &KMeansConfig::default(), 0).is_err());
    assert!(kmeans(&e, 0, &KMeansConfig::default(), 0).is_err());
}

#[test]
fn kmeans_recovers_planted_blocks() {
    let mut hits = 0;
    for seed in 0..100 {
        let mut r = rng(1000 + seed);
        let (e, labels) = planted_blocks(&[10, 10], 100, 0.9, &mut r);
        let fit = kmeans(&e, 2, &KMeansConfig::default(), seed).unwrap();
        if fit.assignment == ClusterAssignment::from_labels(&labels) {
            hits += 1;
        }
    }
    assert!(hits >= 95, "recovered {hits} of 100");
}

#[test]
fn kmeans_is_deterministic_and_monotone() {
    let (e, _) = planted_blocks(&[6, 8, 5, 7], 60, 0.4, &mut rng(7));
    let cfg = KMeansConfig::default();
    let a = kmeans(&e, 4, &cfg, 42).unwrap();
    let b = kmeans(&e, 4, &cfg, 42).unwrap();
    assert_eq!(a, b);
    assert!(a.assignment.n_clusters() <= 4);
    for w in a.loss_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "loss increased: {:?}", a.loss_trace);
    }
}

#[test]
fn kmeans_converged_labels_are_local_minimum() {
    for seed in 0..10 {
        let e = gaussian(25, 40, &mut rng(50 + seed));
        let fit = kmeans(&e, 4, &KMeansConfig::default(), seed).unwrap();
        assert!(fit.loss_trace.len() < KMeansConfig::default().max_iter);
        let z = standardize_rows(&e).unwrap();
        let members = fit.assignment.members();
        let centroids: Vec<Vec<f64>> = members
            .iter()
            .map(|m| {
                let mut c = vec![0.0; 40];
                for &i in m {
                    for t in 0..40 {
                        c[t] += z[(i, t)];
                    }
                }
                let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                c.iter().map(|v| v / n).collect()
            })
            .collect();
        for i in 0..25 {
            let d = |c: &Vec<f64>| 1.0 - (0..40).map(|t| z[(i, t)] * c[t]).sum::<f64>();
            let own = d(&centroids[fit.assignment.labels()[i]]);
            for c in &centroids {
                assert!(own <= d(c) + 1e-12);
            }
        }
    }
}

#[test]
fn kmeans_invariant_to_scaling() {
    let (e, _) = planted_blocks(&[5, 5, 5], 50, 0.5, &mut rng(8));
    let cfg = KMeansConfig::default();
    let a = kmeans(&e, 3, &cfg, 9).unwrap();
    let b = kmeans(&(&e * 1e-3), 3, &cfg, 9).unwrap();
    assert_eq!(a.assignment, b.assignment);
}

fn line_distances(x: &[f64]) -> Matrix {
    Matrix::from_fn(x.len(), x.len(), |i, j| (x[i] - x[j]).abs())
}

#[test]
fn two_points_merge_once() {
    let d = Matrix::from_row_slice(2, 2, &[0.0, 0.7, 0.7, 0.0]);
    for linkage in [Linkage::Average, Linkage::Weighted] {
        let den = agglomerate(&d, linkage, None).unwrap();
        assert_eq!(den.merges.len(), 1);
        assert_eq!(den.merges[0].height, 0.7);
        assert_eq!((den.merges[0].left, den.merges[0].right), (0, 1));
    }
}

#[test]
fn average_linkage_of_singletons_is_the_distance() {
    let d = line_distances(&[0.0, 2.0, 5.0]);
    let den = agglomerate(&d, Linkage::Average, None).unwrap();
    assert_eq!(den.merges[0].height, 2.0);
    assert!((den.merges[1].height - 4.0).abs() < 1e-15);
}

#[test]
fn hand_traced_cuts() {
    let d = line_distances(&[0.0, 1.0, 3.0, 7.0, 15.0]);
    let den = agglomerate(&d, Linkage::Average, None).unwrap();
    let want = [1.0, 2.5, 17.0 / 3.0, 12.25];
    for (m, w) in den.merges.iter().zip(want) {
        assert!((m.height - w).abs() < 1e-12);
    }
    assert_eq!(cut_dendrogram(&den, 0.0), ClusterAssignment::singletons(5));
    assert_eq!(cut_dendrogram(&den, 1.0), ClusterAssignment::singletons(5));
    assert_eq!(cut_dendrogram(&den, 2.5).labels(), &[0, 0, 1, 2, 3]);
    assert_eq!(cut_dendrogram(&den, 3.0).labels(), &[0, 0, 0, 1, 2]);
    assert_eq!(cut_dendrogram(&den, 100.0), ClusterAssignment::single(5));
    assert_eq!(den.cut_merges(2), cut_dendrogram(&den, 3.0));
}

/// Exhaustive reference: clusters as leaf sets, linkage distance recomputed
/// from scratch at every step, ties to the smallest pair of minimum leaves.
fn reference_merges(d: &Matrix, weighted: bool) -> Vec<(Vec<usize>, Vec<usize>, f64)> {
    let p = d.nrows();
    // For weighted linkage the distance depends on the merge history, so keep
    // a tree of (left, right) children per cluster.
    #[derive(Clone)]
    enum Node {
        Leaf(usize),
        Join(Box<Node>, Box<Node>),
    }
    fn leaves(n: &Node, out: &mut Vec<usize>) {
        match n {
            Node::Leaf(i) => out.push(*i),
            Node::Join(a, b) => {
                leaves(a, out);
                leaves(b, out);
            }
        }
    }
    fn wdist(a: &Node, b: &Node, d: &Matrix) -> f64 {
        match (a, b) {
            (Node::Leaf(i), Node::Leaf(j)) => d[(*i, *j)],
            (Node::Join(x, y), _) => 0.5 * (wdist(x, b, d) + wdist(y, b, d)),
            (_, Node::Join(x, y)) => 0.5 * (wdist(a, x, d) + wdist(a, y, d)),
        }
    }
    let mut clusters: Vec<Node> = (0..p).map(Node::Leaf).collect();
    let mut out = Vec::new();
    while clusters.len() > 1 {
        let sets: Vec<Vec<usize>> = clusters
            .iter()
            .map(|c| {
                let mut v = Vec::new();
                leaves(c, &mut v);
                v.sort();
                v
            })
            .collect();
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let dist = if weighted {
                    wdist(&clusters[a], &clusters[b], d)
                } else {
                    let mut s = 0.0;
                    for &i in &sets[a] {
                        for &j in &sets[b] {
                            s += d[(i, j)];
                        }
                    }
                    s / (sets[a].len() * sets[b].len()) as f64
                };
                let key = (sets[a][0].min(sets[b][0]), sets[a][0].max(sets[b][0]));
                let best_key = (sets[best.1][0].min(sets[best.2][0]), sets[best.1][0].max(sets[best.2][0]));
                if dist < best.0 - 1e-12 || ((dist - best.0).abs() <= 1e-12 && key < best_key) {
                    best = (dist, a, b);
                }
            }
        }
        let (h, a, b) = best;
        out.push((sets[a].clone(), sets[b].clone(), h));
        let nb = clusters.remove(b);
        let na = clusters.remove(a);
        clusters.insert(a, Node::Join(Box::new(na), Box::new(nb)));
    }
    out
}

fn check_against_reference(d: &Matrix, linkage: Linkage) {
    let den = agglomerate(d, linkage, None).unwrap();
    let got = den.merge_members();
    let want = reference_merges(d, linkage == Linkage::Weighted);
    assert_eq!(got.len(), want.len());
    for ((ga, gb), (m, (wa, wb, wh))) in got.iter().zip(den.merges.iter().zip(&want)) {
        let mut g = [ga.clone(), gb.clone()];
        let mut w = [wa.clone(), wb.clone()];
        for v in g.iter_mut().chain(w.iter_mut()) {
            v.sort();
        }
        g.sort();
        w.sort();
        assert_eq!(g, w);
        assert!((m.height - wh).abs() < 1e-12);
    }
}

#[test]
fn planted_six_point_average_linkage() {
    let mut d = Matrix::from_element(6, 6, 5.0);
    let within = [0.4, 0.9, 0.6, 0.3, 0.8, 0.5];
    let pairs = [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)];
    for ((i, j), v) in pairs.iter().zip(within) {
        d[(*i, *j)] = v;
        d[(*j, *i)] = v;
    }
    d[(0, 3)] = 4.0;
    d[(3, 0)] = 4.0;
    for i in 0..6 {
        d[(i, i)] = 0.0;
    }
    check_against_reference(&d, Linkage::Average);
    let den = agglomerate(&d, Linkage::Average, None).unwrap();
    assert_eq!(den.cut_merges(4).labels(), &[0, 0, 0, 1, 1, 1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn average_and_weighted_match_reference(seed in 0u64..1_000_000) {
        let mut r = rng(seed);
        let x = uniform(8, 8, 0.1, 3.0, &mut r);
        let mut d = (&x + x.transpose()) * 0.5;
        for i in 0..8 {
            d[(i, i)] = 0.0;
        }
        check_against_reference(&d, Linkage::Average);
        check_against_reference(&d, Linkage::Weighted);
    }

    #[test]
    fn cuts_are_nested(seed in 0u64..1_000_000, a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let mut r = rng(seed);
        let x = uniform(10, 10, 0.1, 3.0, &mut r);
        let mut d = (&x + x.transpose()) * 0.5;
        for i in 0..10 {
            d[(i, i)] = 0.0;
        }
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for linkage in [Linkage::Average, Linkage::Weighted] {
            let den = agglomerate(&d, linkage, None).unwrap();
            for w in den.merges.windows(2) {
                prop_assert!(w[1].height >= w[0].height - 1e-12);
            }
            prop_assert!(den.cut(lo).refines(&den.cut(hi)));
        }
    }
}

fn centroid(x: &Matrix, members: &[usize]) -> Vec<f64> {
    let t = x.ncols();
    (0..t).map(|s| members.iter().map(|&i| x[(i, s)]).sum::<f64>() / members.len() as f64).collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn vector_linkages_match_definitions() {
    let x = gaussian(9, 4, &mut rng(11));
    let d = Matrix::zeros(9, 9);
    for linkage in [Linkage::Centroid, Linkage::Ward, Linkage::Median] {
        let den = agglomerate(&d, linkage, Some(&x)).unwrap();
        assert_eq!(den.merges.len(), 8);
        // Median centroids follow the merge tree: each new cluster sits at the
        // midpoint of its two children.
        let mut med: Vec<Vec<f64>> = (0..9).map(|i| x.row(i).iter().copied().collect()).collect();
        for (m, (a, b)) in den.merges.iter().zip(den.merge_members()) {
            let want = match linkage {
                Linkage::Centroid => euclid(&centroid(&x, &a), &centroid(&x, &b)),
                Linkage::Ward => {
                    let (na, nb) = (a.len() as f64, b.len() as f64);
                    (2.0 * na * nb / (na + nb)).sqrt() * euclid(&centroid(&x, &a), &centroid(&x, &b))
                }
                _ => euclid(&med[m.left], &med[m.right]),
            };
            assert!((m.height - want).abs() < 1e-10, "{linkage}: {} vs {want}", m.height);
            let mid: Vec<f64> = med[m.left].iter().zip(&med[m.right]).map(|(u, v)| 0.5 * (u + v)).collect();
            med.push(mid);
        }
    }
    assert!(agglomerate(&d, Linkage::Ward, None).is_err());
    assert!(agglomerate(&Matrix::zeros(2, 3), Linkage::Average, None).is_err());
}

#[test]
fn early_stopper_is_lazy() {
    let mut evaluated = Vec::new();
    let search = select_over_grid(100, EarlyStopper::new(3, 4, 1e-3), true, |i| {
        evaluated.push(i);
        Ok(if i < 10 { 10.0 - i as f64 } else { 1.0 })
    })
    .unwrap();
    assert!(search.stopped_early);
    // The moving average stops improving once it settles at 1.0 (index 11);
    // the stopper may then look at `patience` more values.
    assert!(evaluated.len() <= 11 + 4 + 1, "evaluated {}", evaluated.len());
    assert_eq!(search.errors.len(), evaluated.len());
    assert!(search.errors[search.best] == 1.0);
    // Ties go to the later grid point when asked.
    assert_eq!(search.best, evaluated.len() - 1);
}

#[test]
fn single_point_grid() {
    let mut calls = 0;
    let s = select_over_grid(1, EarlyStopper::new(3, 3, 1e-3), true, |_| {
        calls += 1;
        Ok(2.0)
    })
    .unwrap();
    assert_eq!((calls, s.best, s.stopped_early), (1, 0, false));
    assert!(select_over_grid(0, EarlyStopper::new(3, 3, 1e-3), true, |_| Ok(0.0)).is_err());

    let (e, _) = planted_blocks(&[4, 4], 60, 0.5, &mut rng(12));
    let s = row_covariance(&e).unwrap();
    let cfg = SelectionConfig { max_clusters: Some(1), ..Default::default() };
    let sel = select_hyperparameter(&e, &s, ClusterMethod::KMeans, &cfg, 0).unwrap();
    assert_eq!((sel.phi, sel.cv_errors.len()), (1, 1));
    assert_eq!(sel.assignment, ClusterAssignment::single(8));
}

#[test]
fn cv_selects_two_planted_blocks() {
    let mut hits = 0;
    for seed in 0..50 {
        let (e, labels) = planted_blocks(&[10, 10], 120, 0.5, &mut rng(2000 + seed));
        let s = row_covariance(&e).unwrap();
        let sel = select_hyperparameter(&e, &s, ClusterMethod::KMeans, &SelectionConfig::default(), seed).unwrap();
        if sel.phi == 2 && sel.assignment == ClusterAssignment::from_labels(&labels) {
            hits += 1;
        }
    }
    assert!(hits >= 45, "selected M = 2 in {hits} of 50");
}

#[test]
fn hierarchical_cv_recovers_blocks() {
    let (e, labels) = planted_blocks(&[6, 1, 8, 2, 5], 150, 0.5, &mut rng(13));
    let s = row_covariance(&e).unwrap();
    let method = ClusterMethod::Hierarchical(Linkage::Average);
    let sel = select_hyperparameter(&e, &s, method, &SelectionConfig::default(), 0).unwrap();
    assert_eq!(sel.assignment, ClusterAssignment::from_labels(&labels));
    let den = sel.dendrogram.unwrap();
    assert_eq!(sel.cutoff, Some(den.merges[sel.phi - 1].height));
    assert_eq!(sel.assignment.n_clusters(), 22 - sel.phi);
}

#[test]
fn cluster_selection_invariant_to_scaling() {
    let (e, _) = planted_blocks(&[5, 7, 6], 90, 0.4, &mut rng(14));
    for method in [ClusterMethod::KMeans, ClusterMethod::Hierarchical(Linkage::Average)] {
        let run = |e: &Matrix| {
            let s = row_covariance(e).unwrap();
            select_hyperparameter(e, &s, method, &SelectionConfig::default(), 5).unwrap().assignment
        };
        assert_eq!(run(&e), run(&(&e * 250.0)));
    }
}

#[test]
fn cv_rejects_bad_configuration() {
    let e = gaussian(6, 12, &mut rng(15));
    let s = row_covariance(&e).unwrap();
    let mut cfg = SelectionConfig::default();
    cfg.cv.folds = 1;
    assert!(select_hyperparameter(&e, &s, ClusterMethod::KMeans, &cfg, 0).is_err());
    let short = gaussian(6, 4, &mut rng(16));
    let s = row_covariance(&short).unwrap();
    assert!(select_hyperparameter(&short, &s, ClusterMethod::KMeans, &SelectionConfig::default(), 0).is_err());
}
