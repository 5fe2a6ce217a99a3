mod common;

use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use udadil::alignment::ClusterAssignment;
use udadil::metrics::*;

fn assignment(labels: &[usize]) -> ClusterAssignment {
    ClusterAssignment::from_labels(labels.to_vec()).unwrap()
}

fn labels_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..40, 1usize..6, 1usize..6).prop_flat_map(|(n, ka, kb)| {
        (proptest::collection::vec(0..ka, n), proptest::collection::vec(0..kb, n))
    })
}

proptest! {
    #[test]
    fn ari_matches_pair_counting((a, b) in labels_strategy()) {
        let got = adjusted_rand_index(&assignment(&a), &assignment(&b)).unwrap();
        prop_assert!((got - ari_by_pairs(&a, &b)).abs() < 1e-10);
    }

    #[test]
    fn ari_is_symmetric_and_invariant_to_renaming((a, b) in labels_strategy(), seed in 0u64..1000) {
        let base = adjusted_rand_index(&assignment(&a), &assignment(&b)).unwrap();
        let rev = adjusted_rand_index(&assignment(&b), &assignment(&a)).unwrap();
        prop_assert!((base - rev).abs() < 1e-12);
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut rng(seed));
        let renamed: Vec<usize> = a.iter().map(|&l| perm[l]).collect();
        let got = adjusted_rand_index(&assignment(&renamed), &assignment(&b)).unwrap();
        prop_assert!((base - got).abs() < 1e-12);
    }

    #[test]
    fn accuracy_matches_enumeration((a, b) in labels_strategy()) {
        let got = clustering_accuracy(&assignment(&a), &assignment(&b)).unwrap();
        prop_assert!((got - accuracy_by_enumeration(&a, &b)).abs() < 1e-12);
        let raw = a.iter().zip(&b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64;
        prop_assert!(got >= raw - 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn kmeans_inertia_never_increases(seed in 0u64..10_000, k in 1usize..5) {
        let mut r = rng(seed);
        let x = random_matrix(&mut r, 30, 2, -5.0, 5.0);
        let res = kmeans(x.view(), &KMeansConfig { n_restarts: 3, ..KMeansConfig::new(k, seed) }).unwrap();
        prop_assert!(res.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        prop_assert_eq!(res.assignment.len(), 30);
        prop_assert!(res.assignment.sizes().iter().all(|&s| s > 0));
        prop_assert!((res.inertia - res.inertia_trace.last().unwrap()).abs() < 1e-9);
    }
}

#[test]
fn random_labelings_have_ari_near_zero() {
    let mut r = rng(7);
    let trials = 1000;
    let a: Vec<usize> = (0..100).map(|i| i % 4).collect();
    let mut total = 0.0;
    for _ in 0..trials {
        let b: Vec<usize> = (0..100).map(|_| r.random_range(0..4)).collect();
        total += adjusted_rand_index(&assignment(&a), &assignment(&b)).unwrap();
    }
    let mean = total / trials as f64;
    assert!(mean.abs() <= 0.05, "mean ARI {mean}");
}

/// Optimal 2-partition of sorted 1-D points is a split between neighbours.
#[test]
fn kmeans_finds_best_one_dimensional_split() {
    let mut r = rng(11);
    for _ in 0..20 {
        let mut v: Vec<f64> = (0..12).map(|_| r.random_range(-10.0..10.0)).collect();
        v.sort_by(f64::total_cmp);
        let sse = |s: &[f64]| {
            let m = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
        };
        let best = (1..v.len()).map(|i| sse(&v[..i]) + sse(&v[i..])).fold(f64::INFINITY, f64::min);
        let x = Array2::from_shape_vec((v.len(), 1), v.clone()).unwrap();
        let res = kmeans(x.view(), &KMeansConfig::new(2, 3)).unwrap();
        assert!((res.inertia - best).abs() < 1e-9, "{} vs {best}", res.inertia);
    }
}

#[test]
fn kmeans_is_deterministic_and_separates_blobs() {
    let mut r = rng(12);
    let (x, truth) = blobs(&mut r, &[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 20, 1.0);
    let cfg = KMeansConfig::new(3, 5);
    let a = kmeans(x.view(), &cfg).unwrap();
    let b = kmeans(x.view(), &cfg).unwrap();
    assert_eq!(a.assignment, b.assignment);
    assert_eq!(adjusted_rand_index(&a.assignment, &assignment(&truth)).unwrap(), 1.0);
}

#[test]
fn evaluate_report_means() {
    let truth = vec![0, 0, 1, 1];
    let report = evaluate(&[
        EvalInput { name: "a", predicted: &assignment(&[1, 1, 0, 0]), truth: Some(&truth[..]) },
        EvalInput { name: "b", predicted: &assignment(&[0, 1, 0, 1]), truth: Some(&truth[..]) },
    ])
    .unwrap();
    assert_eq!(report.per_domain.len(), 2);
    assert!((report.mean_accuracy - 0.75).abs() < 1e-12);
    assert!((report.mean_ari - 0.25).abs() < 1e-12);
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
}
