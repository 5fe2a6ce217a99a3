//! K-means baseline and clustering evaluation.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{solve_assignment, ClusterAssignment};
use crate::rng::{derive, seeded};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Array2<f64>,
    pub assignment: ClusterAssignment,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub inertia_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    pub n_restarts: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iter: 300,
            n_restarts: 10,
            seed,
        }
    }
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub(crate) fn nearest(point: ndarray::ArrayView1<f64>, centroids: ArrayView2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.outer_iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn lloyd(x: ArrayView2<f64>, k: usize, max_iter: usize, seed: u64) -> (Array2<f64>, Vec<usize>, f64, Vec<f64>) {
    let (n, d) = x.dim();
    let mut rng = seeded(seed);
    let init = sample(&mut rng, n, k).into_vec();
    let mut centroids = x.select(ndarray::Axis(0), &init);
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (i, row) in x.outer_iter().enumerate() {
            let (j, dist) = nearest(row, centroids.view());
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
            dists[i] = dist;
        }
        trace.push(dists.iter().sum());
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, row) in x.outer_iter().enumerate() {
            sums.row_mut(labels[i]).scaled_add(1.0, &row);
            counts[labels[i]] += 1;
        }
        let mut taken = vec![false; n];
        for j in 0..k {
            if counts[j] > 0 {
                centroids.row_mut(j).assign(&(&sums.row(j) / counts[j] as f64));
            } else {
                // re-seed an empty cluster at the point farthest from its centroid
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                taken[far] = true;
                centroids.row_mut(j).assign(&x.row(far));
            }
        }
    }
    let inertia = *trace.last().unwrap_or(&0.0);
    (centroids, labels, inertia, trace)
}

/// Lloyd's algorithm from random data points, best of `n_restarts` by inertia.
pub fn kmeans(features: ArrayView2<f64>, cfg: &KMeansConfig) -> Result<KMeansResult> {
    let n = features.nrows();
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if cfg.k > n {
        return Err(Error::InvalidArgument(format!("k = {} exceeds the {n} available points", cfg.k)));
    }
    if features.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("features contain NaN or infinite values".into()));
    }
    let runs: Vec<_> = (0..cfg.n_restarts.max(1))
        .into_par_iter()
        .map(|r| lloyd(features, cfg.k, cfg.max_iter, derive(cfg.seed, r as u64)))
        .collect();
    let (centroids, labels, inertia, inertia_trace) = runs
        .into_iter()
        .reduce(|best, run| if run.2 < best.2 { run } else { best })
        .expect("at least one restart");
    Ok(KMeansResult {
        centroids,
        assignment: ClusterAssignment::new(labels, cfg.k)?,
        inertia,
        inertia_trace,
    })
}

fn choose2(x: u64) -> i128 {
    let x = x as i128;
    x * (x - 1) / 2
}

fn contingency(a: &[usize], b: &[usize]) -> Array2<u64> {
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut t = Array2::zeros((ka, kb));
    for (&x, &y) in a.iter().zip(b) {
        t[[x, y]] += 1;
    }
    t
}

/// Adjusted Rand index of two partitions of the same points.
///
/// Pair counts are kept as integers and combined into a single fraction, so
/// the only rounding is the final division.
pub fn adjusted_rand_index(a: &ClusterAssignment, b: &ClusterAssignment) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "labelings",
            left: a.len(),
            right: b.len(),
        });
    }
    let table = contingency(a.labels(), b.labels());
    let index: i128 = table.iter().map(|&x| choose2(x)).sum();
    let sum_a: i128 = table.rows().into_iter().map(|r| choose2(r.sum())).sum();
    let sum_b: i128 = table.columns().into_iter().map(|c| choose2(c.sum())).sum();
    let total = choose2(a.len() as u64);
    if total == 0 {
        return Ok(1.0);
    }
    // (index - expected) / (max_index - expected), scaled by 2 * total
    let num = 2 * (total * index - sum_a * sum_b);
    let den = total * (sum_a + sum_b) - 2 * sum_a * sum_b;
    if den == 0 {
        // both partitions trivial (one cluster or all singletons)
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Fraction of points whose predicted cluster maps to their true class under
/// the best one-to-one matching of cluster ids to class ids.
pub fn clustering_accuracy(pred: &ClusterAssignment, truth: &ClusterAssignment) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "labelings",
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("cannot score an empty labeling".into()));
    }
    let k = pred.n_clusters().max(truth.n_clusters());
    let mut counts = Array2::<f64>::zeros((k, k));
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        counts[[p, t]] += 1.0;
    }
    let matching = solve_assignment((-&counts).view())?;
    let matched: f64 = matching.mapping().iter().enumerate().map(|(p, &t)| counts[[p, t]]).sum();
    Ok(matched / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainScores {
    pub ari: f64,
    pub accuracy: f64,
    pub n_points: usize,
}

/// Per-domain ARI and accuracy plus their unweighted means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_domain: Vec<(String, DomainScores)>,
    pub mean_ari: f64,
    pub mean_accuracy: f64,
}

/// One evaluated domain.
pub struct EvalInput<'a> {
    pub name: &'a str,
    pub predicted: &'a ClusterAssignment,
    pub truth: Option<&'a [usize]>,
}

pub fn evaluate(inputs: &[EvalInput]) -> Result<EvalReport> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let mut per_domain = Vec::with_capacity(inputs.len());
    for input in inputs {
        let truth = input
            .truth
            .ok_or_else(|| Error::MissingLabels(input.name.to_string()))?;
        let truth = ClusterAssignment::from_labels(truth.to_vec())?;
        per_domain.push((
            input.name.to_string(),
            DomainScores {
                ari: adjusted_rand_index(input.predicted, &truth)?,
                accuracy: clustering_accuracy(input.predicted, &truth)?,
                n_points: truth.len(),
            },
        ));
    }
    let m = per_domain.len() as f64;
    Ok(EvalReport {
        mean_ari: per_domain.iter().map(|(_, s)| s.ari).sum::<f64>() / m,
        mean_accuracy: per_domain.iter().map(|(_, s)| s.accuracy).sum::<f64>() / m,
        per_domain,
    })
}

impl EvalReport {
    /// Comma-separated table: a header, one row per domain, then `mean`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("domain,ari,accuracy,n_points\n");
        for (name, s) in &self.per_domain {
            let _ = writeln!(out, "{name},{},{},{}", s.ari, s.accuracy, s.n_points);
        }
        let total: usize = self.per_domain.iter().map(|(_, s)| s.n_points).sum();
        let _ = writeln!(out, "mean,{},{},{total}", self.mean_ari, self.mean_accuracy);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn ca(v: &[usize]) -> ClusterAssignment {
        ClusterAssignment::from_labels(v.to_vec()).unwrap()
    }

    #[test]
    fn kmeans_examples() {
        let x = array![[0.0], [10.0]];
        let r = kmeans(x.view(), &KMeansConfig::new(2, 0)).unwrap();
        let mut c: Vec<f64> = r.centroids.iter().copied().collect();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.0, 10.0]);
        assert_eq!(r.inertia, 0.0);

        let x = array![[0.0], [1.0], [10.0], [11.0]];
        let r = kmeans(x.view(), &KMeansConfig::new(2, 0)).unwrap();
        let mut c: Vec<f64> = r.centroids.iter().copied().collect();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.5, 10.5]);
        assert_abs_diff_eq!(r.inertia, 1.0);
    }

    #[test]
    fn kmeans_k_equals_n_has_zero_inertia() {
        let x = array![[0.0, 1.0], [2.0, 2.0], [5.0, -1.0]];
        let r = kmeans(x.view(), &KMeansConfig::new(3, 4)).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert!(kmeans(x.view(), &KMeansConfig::new(4, 4)).is_err());
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&ca(&[0, 0, 1, 1]), &ca(&[0, 0, 1, 1])).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&ca(&[0, 0, 1, 1]), &ca(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&ca(&[0, 0, 1, 1]), &ca(&[0, 1, 0, 1])).unwrap(), -0.5);
        assert!(adjusted_rand_index(&ca(&[0, 1]), &ca(&[0])).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(clustering_accuracy(&ca(&[0, 1, 1, 2]), &ca(&[0, 1, 1, 2])).unwrap(), 1.0);
        assert_eq!(clustering_accuracy(&ca(&[2, 0, 0, 1]), &ca(&[0, 1, 1, 2])).unwrap(), 1.0);
        assert_eq!(clustering_accuracy(&ca(&[0, 0, 0, 1]), &ca(&[0, 0, 1, 1])).unwrap(), 0.75);
        assert!(clustering_accuracy(&ca(&[0]), &ca(&[0, 1])).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let p = ca(&[0, 1, 0, 1]);
        let t = [1usize, 0, 1, 0];
        let r = evaluate(&[EvalInput { name: "a", predicted: &p, truth: Some(&t) }]).unwrap();
        assert_eq!(r.mean_ari, 1.0);
        assert_eq!(r.mean_accuracy, 1.0);
        assert!(evaluate(&[]).is_err());
        match evaluate(&[EvalInput { name: "nolabels", predicted: &p, truth: None }]) {
            Err(Error::MissingLabels(n)) => assert_eq!(n, "nolabels"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn evaluate_averages_domains() {
        // 3/5 and 4/5 correct under the best matching
        let p1 = ca(&[0, 0, 0, 0, 0]);
        let t1 = [0usize, 0, 0, 1, 1];
        let p2 = ca(&[0, 0, 0, 0, 1]);
        let t2 = [0usize, 0, 0, 1, 1];
        let r = evaluate(&[
            EvalInput { name: "a", predicted: &p1, truth: Some(&t1) },
            EvalInput { name: "b", predicted: &p2, truth: Some(&t2) },
        ])
        .unwrap();
        assert_abs_diff_eq!(r.per_domain[0].1.accuracy, 0.6);
        assert_abs_diff_eq!(r.per_domain[1].1.accuracy, 0.8);
        assert_abs_diff_eq!(r.mean_accuracy, 0.7, epsilon = 1e-12);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().last().unwrap().starts_with("mean,"));
    }
}
