//! Free-support Wasserstein barycenters.
//!
//! The support is updated by the fixed-point iteration
//! `X <- sum_k alpha_k * T_k(X)` where `T_k` is the barycentric map of the
//! exact plan from the current support to the `k`-th family member. With
//! uniform barycenter weights each step minimises a quadratic upper bound of
//! the objective, so the objective never increases.

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::index::sample_weighted;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{default_label_penalty, labeled_ground_cost};
use crate::ot::{
    barycentric_map_raw, check_simplex, solve_exact_ot, CostMatrix, DiscreteDistribution,
};
use crate::rng::seeded;
use crate::{Error, Result};

/// A point of the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarycentricWeights(Array1<f64>);

impl BarycentricWeights {
    pub fn new(alpha: Array1<f64>) -> Result<Self> {
        check_simplex(alpha.view(), "barycentric weights")?;
        Ok(Self(alpha))
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::NotOnSimplex("barycentric weights are empty".into()));
        }
        Ok(Self(Array1::from_elem(k, 1.0 / k as f64)))
    }

    pub fn one_hot(k: usize, index: usize) -> Result<Self> {
        if index >= k {
            return Err(Error::InvalidArgument(format!("index {index} out of range for {k} weights")));
        }
        let mut a = Array1::zeros(k);
        a[index] = 1.0;
        Ok(Self(a))
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }
}

/// A point cloud whose support points each carry a class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDistribution {
    base: DiscreteDistribution,
    labels: Vec<usize>,
    n_classes: usize,
}

impl LabeledDistribution {
    pub fn new(base: DiscreteDistribution, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if labels.len() != base.len() {
            return Err(Error::DimensionMismatch {
                what: "labels vs support points",
                left: labels.len(),
                right: base.len(),
            });
        }
        if n_classes == 0 {
            return Err(Error::InvalidArgument("n_classes must be at least 1".into()));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {l} out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            base,
            labels,
            n_classes,
        })
    }

    pub fn uniform(support: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        Self::new(DiscreteDistribution::uniform(support)?, labels, n_classes)
    }

    pub fn base(&self) -> &DiscreteDistribution {
        &self.base
    }

    pub fn support(&self) -> &Array2<f64> {
        self.base.support()
    }

    pub fn weights(&self) -> &Array1<f64> {
        self.base.weights()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Probability mass per class.
    pub fn class_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.n_classes];
        for (&l, &w) in self.labels.iter().zip(self.weights().iter()) {
            mass[l] += w;
        }
        mass
    }

    /// Classes with no support point. Callers decide whether that is fatal.
    pub fn empty_classes(&self) -> Vec<usize> {
        self.class_counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Starting support for the fixed-point iteration.
#[derive(Debug, Clone, Default)]
pub enum BarycenterInit {
    /// Seeded draw without replacement from the alpha-weighted pooled family.
    #[default]
    RandomSubset,
    Provided(Array2<f64>),
}

#[derive(Debug, Clone)]
pub struct BarycenterConfig {
    pub n_support: usize,
    pub init: BarycenterInit,
    /// Stop once the largest support-point displacement falls below this.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl BarycenterConfig {
    pub fn new(n_support: usize, seed: u64) -> Self {
        Self {
            n_support,
            init: BarycenterInit::RandomSubset,
            tol: 1e-5,
            max_iter: 100,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BarycenterResult {
    pub barycenter: DiscreteDistribution,
    /// `sum_k alpha_k W(P_k, B)` at the returned support.
    pub objective: f64,
    /// Objective before every update, ending with the returned support's value.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

fn validate_family(dims: impl Iterator<Item = usize>, alpha: &BarycentricWeights, len: usize) -> Result<usize> {
    if len == 0 {
        return Err(Error::InvalidArgument("barycenter family is empty".into()));
    }
    if alpha.len() != len {
        return Err(Error::DimensionMismatch {
            what: "family size vs barycentric weights",
            left: len,
            right: alpha.len(),
        });
    }
    check_simplex(alpha.as_array().view(), "barycentric weights")?;
    let mut dims = dims;
    let d = dims.next().unwrap_or(0);
    for other in dims {
        if other != d {
            return Err(Error::DimensionMismatch {
                what: "feature dimension across family",
                left: d,
                right: other,
            });
        }
    }
    Ok(d)
}

/// Draws `count` distinct points from the pooled `(member, point)` pairs with
/// probability proportional to `alpha_k * w_ki`.
fn sample_pooled(
    family: &[&DiscreteDistribution],
    alpha: &Array1<f64>,
    filter: impl Fn(usize, usize) -> bool,
    count: usize,
    rng: &mut crate::rng::Rng,
) -> Result<Vec<(usize, usize)>> {
    let mut pool = Vec::new();
    let mut mass = Vec::new();
    for (k, p) in family.iter().enumerate() {
        for (i, &w) in p.weights().iter().enumerate() {
            let m = alpha[k] * w;
            if m > 0.0 && filter(k, i) {
                pool.push((k, i));
                mass.push(m);
            }
        }
    }
    if count > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {count} initial support points from {} available",
            pool.len()
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let picked = sample_weighted(rng, pool.len(), |i| mass[i], count)
        .map_err(|e| Error::InvalidArgument(format!("weighted sampling failed: {e}")))?;
    let mut out: Vec<usize> = picked.into_iter().collect();
    // index order, not draw order, keeps the init independent of sampler internals
    out.sort_unstable();
    Ok(out.into_iter().map(|i| pool[i]).collect())
}

/// One fixed-point run given a cost builder.
fn fixed_point<F>(
    targets: &[&DiscreteDistribution],
    alpha: &Array1<f64>,
    mut support: Array2<f64>,
    tol: f64,
    max_iter: usize,
    cost_to: F,
) -> Result<(Array2<f64>, f64, Vec<f64>, usize)>
where
    F: Fn(ArrayView2<f64>, usize) -> Result<CostMatrix> + Sync,
{
    let n = support.nrows();
    let uniform = Array1::from_elem(n, 1.0 / n as f64);
    let active: Vec<usize> = (0..targets.len()).filter(|&k| alpha[k] > 0.0).collect();

    let solve_all = |x: &Array2<f64>| -> Result<Vec<(usize, Array2<f64>, f64)>> {
        active
            .par_iter()
            .map(|&k| {
                let cost = cost_to(x.view(), k)?;
                let plan = solve_exact_ot(&cost, &uniform, targets[k].weights())?;
                let c = plan.cost(&cost);
                Ok((k, plan.into_coupling(), c))
            })
            .collect()
    };

    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let plans = solve_all(&support)?;
        let objective: f64 = plans.iter().map(|(k, _, c)| alpha[*k] * c).sum();
        trace.push(objective);
        if iterations >= max_iter {
            return Ok((support, objective, trace, iterations));
        }
        iterations += 1;
        let mut next = Array2::zeros(support.dim());
        for (k, coupling, _) in &plans {
            let mapped = barycentric_map_raw(coupling.view(), targets[*k].support().view())?;
            next.scaled_add(alpha[*k], &mapped);
        }
        let displacement = (&next - &support)
            .outer_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0f64, f64::max);
        support = next;
        if displacement < tol {
            let plans = solve_all(&support)?;
            let objective: f64 = plans.iter().map(|(k, _, c)| alpha[*k] * c).sum();
            trace.push(objective);
            return Ok((support, objective, trace, iterations));
        }
    }
}

/// Uniform-weight cloud of `cfg.n_support` points approximately minimising
/// `sum_k alpha_k W(P_k, B)`.
pub fn free_support_barycenter(
    family: &[DiscreteDistribution],
    alpha: &BarycentricWeights,
    cfg: &BarycenterConfig,
) -> Result<BarycenterResult> {
    let d = validate_family(family.iter().map(|p| p.dim()), alpha, family.len())?;
    if cfg.n_support == 0 {
        return Err(Error::InvalidArgument("n_support must be at least 1".into()));
    }
    let refs: Vec<&DiscreteDistribution> = family.iter().collect();
    let a = alpha.as_array();
    let init = match &cfg.init {
        BarycenterInit::Provided(x) => {
            if x.dim() != (cfg.n_support, d) {
                return Err(Error::DimensionMismatch {
                    what: "provided init rows vs n_support",
                    left: x.nrows(),
                    right: cfg.n_support,
                });
            }
            x.clone()
        }
        BarycenterInit::RandomSubset => {
            let mut rng = seeded(cfg.seed);
            let picks = sample_pooled(&refs, a, |_, _| true, cfg.n_support, &mut rng)?;
            gather(&refs, &picks, d)
        }
    };
    let (support, objective, objective_trace, iterations) = fixed_point(
        &refs,
        a,
        init,
        cfg.tol,
        cfg.max_iter,
        |x, k| Ok(CostMatrix::new(crate::ot::sq_dist_matrix(x, refs[k].support().view())?)?),
    )?;
    Ok(BarycenterResult {
        barycenter: DiscreteDistribution::uniform(support)?,
        objective,
        objective_trace,
        iterations,
    })
}

fn gather(family: &[&DiscreteDistribution], picks: &[(usize, usize)], d: usize) -> Array2<f64> {
    let mut out = Array2::zeros((picks.len(), d));
    for (r, &(k, i)) in picks.iter().enumerate() {
        out.row_mut(r).assign(&family[k].support().row(i));
    }
    out
}

/// Splits `total` into integer parts proportional to `shares` (Hamilton's
/// largest-remainder method). Ties go to the lower index.
pub(crate) fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    if sum <= 0.0 || shares.is_empty() {
        let mut out = vec![0; shares.len()];
        for i in 0..total {
            let len = out.len();
            out[i % len] += 1;
        }
        return out;
    }
    let quotas: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut out: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = quotas[i] - quotas[i].floor();
        let rj = quotas[j] - quotas[j].floor();
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// Per-class prototype counts: largest-remainder split of `n_support` by the
/// given class shares, then every class topped up to one prototype (taken
/// from the currently largest class).
pub(crate) fn class_quotas(shares: &[f64], n_support: usize) -> Result<Vec<usize>> {
    let n_classes = shares.len();
    if n_support < n_classes {
        return Err(Error::InvalidArgument(format!(
            "n_support = {n_support} is smaller than n_classes = {n_classes}; \
             every class needs at least one prototype"
        )));
    }
    let mut quotas = largest_remainder(shares, n_support);
    for c in 0..n_classes {
        if quotas[c] == 0 {
            let donor = (0..n_classes)
                .max_by(|&i, &j| quotas[i].cmp(&quotas[j]).then(j.cmp(&i)))
                .unwrap_or(0);
            quotas[donor] -= 1;
            quotas[c] = 1;
        }
    }
    Ok(quotas)
}

#[derive(Debug, Clone)]
pub struct LabeledBarycenterConfig {
    pub n_support: usize,
    /// Additive penalty for transporting mass across labels; `None` picks
    /// the data-driven default of [`default_label_penalty`].
    pub beta: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl LabeledBarycenterConfig {
    pub fn new(n_support: usize, seed: u64) -> Self {
        Self {
            n_support,
            beta: None,
            tol: 1e-5,
            max_iter: 100,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledBarycenterResult {
    pub barycenter: LabeledDistribution,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub beta: f64,
}

/// Label-aware barycenter. Support labels are fixed at initialisation with
/// per-class counts proportional to the alpha-weighted class frequencies.
pub fn labeled_barycenter(
    family: &[LabeledDistribution],
    alpha: &BarycentricWeights,
    cfg: &LabeledBarycenterConfig,
) -> Result<LabeledBarycenterResult> {
    let d = validate_family(family.iter().map(|p| p.dim()), alpha, family.len())?;
    let n_classes = family[0].n_classes();
    if let Some(p) = family.iter().find(|p| p.n_classes() != n_classes) {
        return Err(Error::DimensionMismatch {
            what: "n_classes across family",
            left: n_classes,
            right: p.n_classes(),
        });
    }
    let a = alpha.as_array();
    let mut shares = vec![0.0; n_classes];
    for (k, p) in family.iter().enumerate() {
        for (c, m) in p.class_mass().into_iter().enumerate() {
            shares[c] += a[k] * m;
        }
    }
    let quotas = class_quotas(&shares, cfg.n_support)?;

    let bases: Vec<&DiscreteDistribution> = family.iter().map(|p| p.base()).collect();
    let mut rng = seeded(cfg.seed);
    let mut init = Array2::zeros((cfg.n_support, d));
    let mut labels = Vec::with_capacity(cfg.n_support);
    let mut row = 0;
    for (c, &q) in quotas.iter().enumerate() {
        let in_class = |k: usize, i: usize| family[k].labels()[i] == c;
        let available = family
            .iter()
            .enumerate()
            .map(|(k, p)| (0..p.len()).filter(|&i| a[k] * p.weights()[i] > 0.0 && in_class(k, i)).count())
            .sum::<usize>();
        if available == 0 {
            return Err(Error::InvalidArgument(format!(
                "class {c} has no support point with positive weight in the family"
            )));
        }
        let distinct = q.min(available);
        let mut picks = sample_pooled(&bases, a, in_class, distinct, &mut rng)?;
        // more prototypes than distinct class points: repeat random ones
        while picks.len() < q {
            let j = rng.random_range(0..distinct);
            picks.push(picks[j]);
        }
        for &(k, i) in &picks {
            init.row_mut(row).assign(&bases[k].support().row(i));
            labels.push(c);
            row += 1;
        }
    }

    let beta = match cfg.beta {
        Some(b) => b,
        None => default_label_penalty(&bases),
    };
    let init_dist = LabeledDistribution::uniform(init.clone(), labels.clone(), n_classes)?;
    let (support, objective, objective_trace, iterations) =
        fixed_point(&bases, a, init, cfg.tol, cfg.max_iter, |x, k| {
            let current = LabeledDistribution {
                base: DiscreteDistribution::uniform(x.to_owned())?,
                labels: init_dist.labels.clone(),
                n_classes,
            };
            labeled_ground_cost(&current, &family[k], beta)
        })?;
    Ok(LabeledBarycenterResult {
        barycenter: LabeledDistribution::uniform(support, labels, n_classes)?,
        objective,
        objective_trace,
        iterations,
        beta,
    })
}
