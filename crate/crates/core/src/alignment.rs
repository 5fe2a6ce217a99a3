//! Matching cluster indices across domains.
//!
//! The cost of pairing cluster `i` of one domain with cluster `j` of another
//! is the exact Wasserstein distance between the two sub-clouds; the pairing
//! itself is a linear assignment problem solved with the Hungarian method.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ot::{wasserstein_distance, CostMatrix, DiscreteDistribution, OtMethod};
use crate::rng::{derive, seeded};
use crate::{Error, Result};

/// Clusters larger than this are subsampled before pairwise distances.
pub const MAX_CLUSTER_POINTS: usize = 500;

/// Hard cluster labels in `0..n`, one per data point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    n: usize,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<usize>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("cluster count must be at least 1".into()));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::InvalidArgument(format!("label {l} out of range for {n} clusters")));
        }
        Ok(Self { labels, n })
    }

    /// Labels with `n` inferred as `max + 1`.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let n = labels.iter().max().map_or(1, |m| m + 1);
        Self::new(labels, n)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_clusters(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    /// Renames label `l` to `mapping[l]`.
    pub fn relabel(&self, mapping: &Permutation) -> Result<Self> {
        if mapping.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "permutation size vs cluster count",
                left: mapping.len(),
                right: self.n,
            });
        }
        Ok(Self {
            labels: self.labels.iter().map(|&l| mapping.mapping[l]).collect(),
            n: self.n,
        })
    }

    pub fn into_labels(self) -> Vec<usize> {
        self.labels
    }
}

/// A bijection on `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || seen[m] {
                return Err(Error::InvalidArgument(format!("{mapping:?} is not a permutation")));
            }
            seen[m] = true;
        }
        Ok(Self { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Self { mapping: inv }
    }

    /// `sum_i c[i, mapping[i]]`, summed in row order.
    pub fn cost(&self, c: ArrayView2<f64>) -> f64 {
        self.mapping.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum()
    }
}

/// Uniform sub-cloud of the points carrying `label`, subsampled to
/// [`MAX_CLUSTER_POINTS`] when larger.
fn cluster_cloud(
    x: &DiscreteDistribution,
    labels: &ClusterAssignment,
    label: usize,
    domain: &str,
    seed: u64,
) -> Result<DiscreteDistribution> {
    let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels.labels[i] == label).collect();
    if idx.is_empty() {
        return Err(Error::EmptyCluster {
            domain: domain.to_string(),
            cluster: label,
        });
    }
    let subsampled = idx.len() > MAX_CLUSTER_POINTS;
    if subsampled {
        let mut rng = seeded(derive(seed, label as u64));
        let mut keep = sample(&mut rng, idx.len(), MAX_CLUSTER_POINTS).into_vec();
        keep.sort_unstable();
        idx = keep.into_iter().map(|k| idx[k]).collect();
    }
    let support = x.support().select(Axis(0), &idx);
    let w0 = x.weights()[0];
    if subsampled || x.weights().iter().all(|&v| v == w0) {
        return DiscreteDistribution::uniform(support);
    }
    let w: Array1<f64> = idx.iter().map(|&i| x.weights()[i]).collect();
    let total = w.sum();
    DiscreteDistribution::new(support, w / total)
}

/// Pairwise exact Wasserstein costs between the clusters of two domains.
pub fn cluster_cost_matrix(
    a: &DiscreteDistribution,
    labels_a: &ClusterAssignment,
    b: &DiscreteDistribution,
    labels_b: &ClusterAssignment,
    seed: u64,
) -> Result<CostMatrix> {
    cluster_cost_matrix_named(a, labels_a, "A", b, labels_b, "B", seed)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn cluster_cost_matrix_named(
    a: &DiscreteDistribution,
    labels_a: &ClusterAssignment,
    name_a: &str,
    b: &DiscreteDistribution,
    labels_b: &ClusterAssignment,
    name_b: &str,
    seed: u64,
) -> Result<CostMatrix> {
    if labels_a.n != labels_b.n {
        return Err(Error::DimensionMismatch {
            what: "cluster counts",
            left: labels_a.n,
            right: labels_b.n,
        });
    }
    if labels_a.len() != a.len() || labels_b.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "labels vs points",
            left: labels_a.len(),
            right: a.len(),
        });
    }
    let n = labels_a.n;
    let ca = (0..n)
        .map(|i| cluster_cloud(a, labels_a, i, name_a, derive(seed, 11)))
        .collect::<Result<Vec<_>>>()?;
    let cb = (0..n)
        .map(|j| cluster_cloud(b, labels_b, j, name_b, derive(seed, 13)))
        .collect::<Result<Vec<_>>>()?;
    let entries = (0..n * n)
        .into_par_iter()
        .map(|k| wasserstein_distance(&ca[k / n], &cb[k % n], &OtMethod::Exact))
        .collect::<Result<Vec<f64>>>()?;
    CostMatrix::new(Array2::from_shape_vec((n, n), entries).expect("n x n entries"))
}

/// Hungarian method (shortest augmenting paths with potentials) on a square
/// matrix. Returns the row-to-column assignment.
pub(crate) fn hungarian(c: ArrayView2<f64>) -> Vec<usize> {
    let n = c.nrows();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; index 0 is the virtual source column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

/// Minimum-cost permutation of a square cost matrix (entries may be
/// negative). Among optimal permutations the lexicographically smallest is
/// returned.
pub fn solve_assignment(c: ArrayView2<f64>) -> Result<Permutation> {
    let (n, m) = c.dim();
    if n != m {
        return Err(Error::DimensionMismatch {
            what: "assignment matrix must be square",
            left: n,
            right: m,
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("assignment matrix is empty".into()));
    }
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("assignment matrix has non-finite entries".into()));
    }
    let best = hungarian(c);
    let optimum: f64 = best.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum();
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-12 * scale * n as f64;

    // Fix rows in order, taking the smallest column that still admits an
    // optimal completion. `current` is always an optimal completion.
    let mut current = best;
    let mut fixed_cost = 0.0;
    let mut used = vec![false; n];
    for i in 0..n {
        let free_cols: Vec<usize> = (0..n).filter(|&j| !used[j]).collect();
        let rest_rows: Vec<usize> = ((i + 1)..n).collect();
        for &j in free_cols.iter().filter(|&&j| j < current[i]) {
            let cols: Vec<usize> = free_cols.iter().copied().filter(|&x| x != j).collect();
            let sub = c.select(Axis(0), &rest_rows);
            let sub = sub.select(Axis(1), &cols);
            let sub_best = hungarian(sub.view());
            let sub_cost: f64 = sub_best.iter().enumerate().map(|(r, &k)| sub[[r, k]]).sum();
            if fixed_cost + c[[i, j]] + sub_cost <= optimum + tol {
                current[i] = j;
                for (r, &k) in sub_best.iter().enumerate() {
                    current[i + 1 + r] = cols[k];
                }
                break;
            }
        }
        used[current[i]] = true;
        fixed_cost += c[[i, current[i]]];
    }
    Permutation::new(current)
}

/// Relabels every domain in `others` so that label `l` means "matched to
/// cluster `l` of the reference". The reference itself is left unchanged.
pub fn align_to_reference(
    reference: (&DiscreteDistribution, &ClusterAssignment),
    others: &[(&DiscreteDistribution, &ClusterAssignment)],
    seed: u64,
) -> Result<Vec<ClusterAssignment>> {
    let names: Vec<String> = (0..others.len()).map(|i| format!("other #{i}")).collect();
    align_named(reference, "reference", others, &names, seed)
}

pub(crate) fn align_named(
    reference: (&DiscreteDistribution, &ClusterAssignment),
    reference_name: &str,
    others: &[(&DiscreteDistribution, &ClusterAssignment)],
    names: &[String],
    seed: u64,
) -> Result<Vec<ClusterAssignment>> {
    others
        .iter()
        .zip(names)
        .enumerate()
        .map(|(k, ((x, labels), name))| {
            let c = cluster_cost_matrix_named(
                reference.0,
                reference.1,
                reference_name,
                x,
                labels,
                name,
                derive(seed, k as u64),
            )?;
            // sigma[i] = cluster of the other domain matched to reference cluster i
            let sigma = solve_assignment(c.view())?;
            labels.relabel(&sigma.inverse())
        })
        .collect()
}
