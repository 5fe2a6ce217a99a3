mod common;

use common::*;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::Rng;
use udadil::barycenter::*;
use udadil::ot::{wasserstein_distance, DiscreteDistribution, OtMethod};

fn dirac(x: f64) -> DiscreteDistribution {
    DiscreteDistribution::uniform(array![[x]]).unwrap()
}

#[test]
fn dirac_barycenters() {
    let fam = [dirac(0.0), dirac(2.0)];
    for (w, expected) in [([0.5, 0.5], 1.0), ([0.75, 0.25], 0.5)] {
        let alpha = BarycentricWeights::new(ndarray::Array1::from(w.to_vec())).unwrap();
        let r = free_support_barycenter(&fam, &alpha, &BarycenterConfig::new(1, 0)).unwrap();
        assert!((r.barycenter.support()[[0, 0]] - expected).abs() < 1e-6);
    }
}

/// In one dimension the barycenter of uniform n-point clouds with n support
/// points is the weighted average of the sorted clouds.
#[test]
fn one_dimensional_barycenter_averages_quantiles() {
    let mut r = rng(3);
    for trial in 0..20 {
        let n = 6;
        let clouds: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| r.random_range(-10.0..10.0)).collect()).collect();
        let w: Vec<f64> = {
            let v: Vec<f64> = (0..3).map(|_| r.random_range(0.1..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect()
        };
        let fam: Vec<DiscreteDistribution> = clouds
            .iter()
            .map(|c| DiscreteDistribution::uniform(Array2::from_shape_vec((n, 1), c.clone()).unwrap()).unwrap())
            .collect();
        let alpha = BarycentricWeights::new(ndarray::Array1::from(w.clone())).unwrap();
        let res = free_support_barycenter(&fam, &alpha, &BarycenterConfig::new(n, trial)).unwrap();
        let mut got: Vec<f64> = res.barycenter.support().iter().copied().collect();
        got.sort_by(f64::total_cmp);
        let sorted: Vec<Vec<f64>> = clouds
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.sort_by(f64::total_cmp);
                c
            })
            .collect();
        for (i, g) in got.iter().enumerate() {
            let expected: f64 = (0..3).map(|k| w[k] * sorted[k][i]).sum();
            assert!((g - expected).abs() < 1e-9, "trial {trial}: {got:?}");
        }
        let objective: f64 = (0..3)
            .map(|k| w[k] * wasserstein_distance(&fam[k], &res.barycenter, &OtMethod::Exact).unwrap())
            .sum();
        assert!((objective - res.objective).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn fixed_point_objective_never_increases(seed in 0u64..100_000) {
        prop_assert!(objective_is_monotone(seed));
    }

    #[test]
    fn labeled_barycenter_keeps_class_structure(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let fam: Vec<LabeledDistribution> = (0..2)
            .map(|_| {
                let (x, labels) = blobs(&mut r, &[[0.0, 0.0], [20.0, 0.0]], 6, 1.0);
                LabeledDistribution::uniform(x, labels, 2).unwrap()
            })
            .collect();
        let res = labeled_barycenter(&fam, &BarycentricWeights::uniform(2).unwrap(), &LabeledBarycenterConfig::new(4, seed)).unwrap();
        let b = &res.barycenter;
        prop_assert_eq!(b.class_counts(), vec![2, 2]);
        for (row, &l) in b.support().outer_iter().zip(b.labels()) {
            // class 0 sits near the origin, class 1 near x = 20
            prop_assert!((row[0] - 20.0 * l as f64).abs() < 2.0);
        }
    }
}
