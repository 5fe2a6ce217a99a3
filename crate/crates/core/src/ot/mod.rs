//! Discrete optimal transport between weighted point clouds.
//!
//! Ground cost is the squared Euclidean distance throughout, so
//! [`wasserstein_distance`] reports the raw transport cost, i.e. the squared
//! 2-Wasserstein distance.

mod exact;
mod sinkhorn;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use exact::{solve_exact_ot, solve_exact_ot_with_limit};
pub use sinkhorn::{
    sinkhorn, solve_sinkhorn, SinkhornConfig, SinkhornSolution, Stabilization,
};

/// Tolerance on the total mass of a probability vector.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A finitely supported probability measure: `n` points in `R^d` with weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    support: Array2<f64>,
    weights: Array1<f64>,
}

impl DiscreteDistribution {
    pub fn new(support: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let (n, d) = support.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidDistribution(format!(
                "support must be non-empty, got {n}x{d}"
            )));
        }
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                what: "support rows vs weights",
                left: n,
                right: weights.len(),
            });
        }
        if support.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidDistribution(
                "support contains NaN or infinite entries".into(),
            ));
        }
        check_simplex(weights.view(), "weights")?;
        Ok(Self { support, weights })
    }

    /// Empirical measure with weight `1/n` on every row of `support`.
    pub fn uniform(support: Array2<f64>) -> Result<Self> {
        let n = support.nrows();
        let w = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        Self::new(support, Array1::from_elem(n, w))
    }

    pub fn support(&self) -> &Array2<f64> {
        &self.support
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.support.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.support.ncols()
    }

    /// Weighted mean of the support.
    pub fn mean(&self) -> Array1<f64> {
        self.weights.dot(&self.support)
    }

    pub fn into_support(self) -> Array2<f64> {
        self.support
    }
}

/// Checks that `w` is non-negative, finite, and sums to one.
pub fn check_simplex(w: ArrayView1<f64>, what: &str) -> Result<()> {
    if w.is_empty() {
        return Err(Error::NotOnSimplex(format!("{what} is empty")));
    }
    if let Some(x) = w.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::NotOnSimplex(format!("{what} has entry {x}")));
    }
    let s = w.sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::NotOnSimplex(format!("{what} sums to {s}")));
    }
    Ok(())
}

/// Pairwise ground costs between the supports of two distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if let Some(x) = entries.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cost entries must be finite and non-negative, found {x}"
            )));
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn mean(&self) -> f64 {
        self.0.mean().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// A coupling together with the marginals it was solved against.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    coupling: Array2<f64>,
    row_marginal: Array1<f64>,
    col_marginal: Array1<f64>,
}

impl TransportPlan {
    pub(crate) fn from_parts(
        coupling: Array2<f64>,
        row_marginal: Array1<f64>,
        col_marginal: Array1<f64>,
    ) -> Self {
        Self {
            coupling,
            row_marginal,
            col_marginal,
        }
    }

    pub fn coupling(&self) -> &Array2<f64> {
        &self.coupling
    }

    pub fn row_marginal(&self) -> &Array1<f64> {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &Array1<f64> {
        &self.col_marginal
    }

    /// Frobenius inner product `<C, pi>`.
    pub fn cost(&self, cost: &CostMatrix) -> f64 {
        frobenius(cost.view(), self.coupling.view())
    }

    pub fn total_mass(&self) -> f64 {
        self.coupling.sum()
    }

    /// Largest absolute deviation of any row or column sum from its target.
    pub fn marginal_violation(&self) -> f64 {
        let rows = self.coupling.sum_axis(Axis(1));
        let cols = self.coupling.sum_axis(Axis(0));
        let r = (&rows - &self.row_marginal)
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()));
        let c = (&cols - &self.col_marginal)
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()));
        r.max(c)
    }

    pub fn into_coupling(self) -> Array2<f64> {
        self.coupling
    }
}

pub(crate) fn frobenius(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Squared Euclidean distances between two raw point matrices.
pub fn sq_dist_matrix(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            what: "feature dimension",
            left: a.ncols(),
            right: b.ncols(),
        });
    }
    let mut out = Array2::zeros((a.nrows(), b.nrows()));
    for (i, x) in a.outer_iter().enumerate() {
        for (j, y) in b.outer_iter().enumerate() {
            out[[i, j]] = x
                .iter()
                .zip(y.iter())
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
        }
    }
    Ok(out)
}

pub fn squared_euclidean_cost(
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
) -> Result<CostMatrix> {
    Ok(CostMatrix(sq_dist_matrix(a.support.view(), b.support.view())?))
}

/// Which solver [`wasserstein_distance`] uses.
#[derive(Debug, Clone, Default)]
pub enum OtMethod {
    #[default]
    Exact,
    Entropic(SinkhornConfig),
}

/// Optimal transport cost between `p` and `q` (squared W2).
pub fn wasserstein_distance(
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
    method: &OtMethod,
) -> Result<f64> {
    let cost = squared_euclidean_cost(p, q)?;
    let plan = match method {
        OtMethod::Exact => solve_exact_ot(&cost, p.weights(), q.weights())?,
        OtMethod::Entropic(cfg) => sinkhorn(&cost, p.weights(), q.weights(), cfg)?.plan,
    };
    Ok(plan.cost(&cost).max(0.0))
}

/// Sends every source point to the plan-weighted mean of the target points
/// it transports mass to.
pub fn barycentric_map(plan: &TransportPlan, target_support: ArrayView2<f64>) -> Result<Array2<f64>> {
    barycentric_map_raw(plan.coupling.view(), target_support)
}

pub(crate) fn barycentric_map_raw(
    coupling: ArrayView2<f64>,
    target_support: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if coupling.ncols() != target_support.nrows() {
        return Err(Error::DimensionMismatch {
            what: "plan columns vs target points",
            left: coupling.ncols(),
            right: target_support.nrows(),
        });
    }
    let d = target_support.ncols();
    let mut mapped = Array2::zeros((coupling.nrows(), d));
    for (i, mut out) in mapped.outer_iter_mut().enumerate() {
        let row = coupling.row(i);
        let mass: f64 = row.sum();
        if mass <= 0.0 {
            return Err(Error::DegenerateRow { row: i });
        }
        for (j, &p) in row.iter().enumerate() {
            if p != 0.0 {
                out.scaled_add(p / mass, &target_support.row(j));
            }
        }
    }
    Ok(mapped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn cloud(points: Array2<f64>) -> DiscreteDistribution {
        DiscreteDistribution::uniform(points).unwrap()
    }

    #[test]
    fn distribution_rejects_bad_input() {
        assert!(DiscreteDistribution::uniform(Array2::zeros((0, 2))).is_err());
        assert!(DiscreteDistribution::new(array![[0.0], [1.0]], array![0.6, 0.6]).is_err());
        assert!(DiscreteDistribution::new(array![[0.0], [1.0]], array![1.5, -0.5]).is_err());
        assert!(DiscreteDistribution::uniform(array![[f64::NAN]]).is_err());
        assert!(DiscreteDistribution::new(array![[0.0]], array![0.5, 0.5]).is_err());
    }

    #[test]
    fn cost_examples() {
        let o = cloud(array![[0.0, 0.0]]);
        assert_eq!(squared_euclidean_cost(&o, &o).unwrap().entries(), &array![[0.0]]);
        let p = cloud(array![[3.0, 4.0]]);
        assert_eq!(squared_euclidean_cost(&o, &p).unwrap().entries(), &array![[25.0]]);
        let a = cloud(array![[0.0], [1.0]]);
        let b = cloud(array![[0.0], [2.0]]);
        assert_eq!(
            squared_euclidean_cost(&a, &b).unwrap().entries(),
            &array![[0.0, 4.0], [1.0, 1.0]]
        );
    }

    #[test]
    fn cost_dimension_mismatch_names_both_dims() {
        let a = cloud(array![[0.0, 0.0]]);
        let b = cloud(array![[0.0, 0.0, 0.0]]);
        let err = squared_euclidean_cost(&a, &b).unwrap_err().to_string();
        assert!(err.contains('2') && err.contains('3'), "{err}");
    }

    #[test]
    fn self_cost_has_zero_diagonal() {
        let a = cloud(array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]]);
        let c = squared_euclidean_cost(&a, &a).unwrap();
        for i in 0..3 {
            assert_eq!(c.entries()[[i, i]], 0.0);
        }
    }

    #[test]
    fn wasserstein_examples() {
        let p = cloud(array![[0.0, 1.0], [2.0, 3.0], [-1.0, 0.5]]);
        assert!(wasserstein_distance(&p, &p, &OtMethod::Exact).unwrap() < 1e-9);
        let a = cloud(array![[0.0]]);
        let b = cloud(array![[3.0]]);
        assert_abs_diff_eq!(wasserstein_distance(&a, &b, &OtMethod::Exact).unwrap(), 9.0);
    }

    #[test]
    fn wasserstein_three_points_matches_permutations() {
        let xs = [0.3, -1.2, 2.5];
        let ys = [1.0, 0.1, -0.7];
        let p = cloud(Array2::from_shape_vec((3, 1), xs.to_vec()).unwrap());
        let q = cloud(Array2::from_shape_vec((3, 1), ys.to_vec()).unwrap());
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms
            .iter()
            .map(|s| (0..3).map(|i| (xs[i] - ys[s[i]]).powi(2)).sum::<f64>() / 3.0)
            .fold(f64::INFINITY, f64::min);
        let w = wasserstein_distance(&p, &q, &OtMethod::Exact).unwrap();
        assert_abs_diff_eq!(w, best, epsilon = 1e-12);
    }

    #[test]
    fn barycentric_map_examples() {
        let plan = TransportPlan::from_parts(array![[1.0]], array![1.0], array![1.0]);
        assert_eq!(barycentric_map(&plan, array![[5.0, 5.0]].view()).unwrap(), array![[5.0, 5.0]]);

        let plan = TransportPlan::from_parts(array![[0.5, 0.5]], array![1.0], array![0.5, 0.5]);
        assert_eq!(barycentric_map(&plan, array![[0.0], [2.0]].view()).unwrap(), array![[1.0]]);

        let t = array![[1.0, 2.0], [-3.0, 0.5], [7.0, 7.0]];
        let diag = Array2::from_diag(&Array1::from_elem(3, 1.0 / 3.0));
        let w = Array1::from_elem(3, 1.0 / 3.0);
        let plan = TransportPlan::from_parts(diag, w.clone(), w);
        assert_eq!(barycentric_map(&plan, t.view()).unwrap(), t);
    }

    #[test]
    fn barycentric_map_zero_row_is_an_error() {
        let plan = TransportPlan::from_parts(
            array![[0.5, 0.5], [0.0, 0.0]],
            array![1.0, 0.0],
            array![0.5, 0.5],
        );
        match barycentric_map(&plan, array![[0.0], [1.0]].view()) {
            Err(Error::DegenerateRow { row }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
