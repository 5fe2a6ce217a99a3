//! Dataset dictionary learning over labeled point clouds.
//!
//! A [`Dictionary`] holds `K` labeled atoms and, for every training domain, a
//! row of barycentric coordinates on the simplex. Each domain is modelled as
//! the label-aware Wasserstein barycenter of the atoms under its coordinates.
//!
//! Training is minibatch gradient descent on the entropic reconstruction
//! loss. Inside one step the barycenter of the atom minibatches is computed
//! by a few fixed-point iterations with exact transport; exact plans are
//! locally constant in the support, so the barycenter support is locally the
//! linear map `X_B = sum_k alpha_k P_k A_k` and its derivatives are exact.
//! The outer Sinkhorn term is differentiated with the envelope theorem: the
//! gradient of the regularised objective with respect to the cost is the
//! optimal plan.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::hungarian;
use crate::barycenter::{
    class_quotas, labeled_barycenter, largest_remainder, BarycentricWeights, LabeledBarycenterConfig,
    LabeledDistribution,
};
use crate::ot::{
    sinkhorn, solve_exact_ot, sq_dist_matrix, CostMatrix, DiscreteDistribution, SinkhornConfig,
    Stabilization,
};
use crate::rng::{derive, seeded, Rng};
use crate::{Error, Result};

/// Largest support size an atom gets by default.
pub const MAX_DEFAULT_ATOM_SIZE: usize = 200;

/// A learnable labeled point cloud with uniform weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    content: LabeledDistribution,
}

impl Atom {
    pub fn new(support: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        Ok(Self {
            content: LabeledDistribution::uniform(support, labels, n_classes)?,
        })
    }

    pub fn content(&self) -> &LabeledDistribution {
        &self.content
    }

    pub fn support(&self) -> &Array2<f64> {
        self.content.support()
    }

    pub fn labels(&self) -> &[usize] {
        self.content.labels()
    }

    pub fn len(&self) -> usize {
        self.content.len()
    }

    pub fn is_empty(&self) -> bool {
        self.content.is_empty()
    }

    /// Feature cloud with labels dropped.
    pub fn features(&self) -> &DiscreteDistribution {
        self.content.base()
    }
}

/// Class-aware ground cost `|x - y|^2 + beta * [label_x != label_y]`.
pub fn labeled_ground_cost(
    a: &LabeledDistribution,
    b: &LabeledDistribution,
    beta: f64,
) -> Result<CostMatrix> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "label penalty beta must be finite and non-negative, got {beta}"
        )));
    }
    if a.n_classes() != b.n_classes() {
        return Err(Error::DimensionMismatch {
            what: "n_classes",
            left: a.n_classes(),
            right: b.n_classes(),
        });
    }
    let mut c = sq_dist_matrix(a.support().view(), b.support().view())?;
    add_label_penalty(&mut c, a.labels(), b.labels(), beta);
    CostMatrix::new(c)
}

fn add_label_penalty(c: &mut Array2<f64>, la: &[usize], lb: &[usize], beta: f64) {
    if beta == 0.0 {
        return;
    }
    for ((i, j), x) in c.indexed_iter_mut() {
        if la[i] != lb[j] {
            *x += beta;
        }
    }
}

/// Strided subsample of at most `cap` rows pooled across clouds.
fn pooled_rows(clouds: &[&DiscreteDistribution], cap: usize) -> Array2<f64> {
    let total: usize = clouds.iter().map(|c| c.len()).sum();
    let d = clouds.first().map(|c| c.dim()).unwrap_or(0);
    let stride = total.div_ceil(cap.max(1)).max(1);
    let mut rows = Vec::new();
    let mut idx = 0;
    for c in clouds {
        for r in c.support().outer_iter() {
            if idx % stride == 0 {
                rows.extend(r.iter().copied());
            }
            idx += 1;
        }
    }
    let n = rows.len() / d.max(1);
    Array2::from_shape_vec((n, d), rows).expect("row-major pooled rows")
}

/// `10 x` the 95th percentile of pairwise squared distances within the
/// pooled clouds (at most 256 points are used).
pub fn default_label_penalty(clouds: &[&DiscreteDistribution]) -> f64 {
    let pts = pooled_rows(clouds, 256);
    let n = pts.nrows();
    let mut costs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = &pts.row(i) - &pts.row(j);
            costs.push(diff.dot(&diff));
        }
    }
    if costs.is_empty() {
        return 1.0;
    }
    costs.sort_by(f64::total_cmp);
    let rank = ((costs.len() - 1) as f64 * 0.95).round() as usize;
    let p95 = costs[rank];
    if p95 > 0.0 {
        10.0 * p95
    } else {
        1.0
    }
}

/// Mean squared distance between two pooled families (at most 256 points each).
fn mean_feature_cost(a: &[&DiscreteDistribution], b: &[&DiscreteDistribution]) -> f64 {
    let x = pooled_rows(a, 256);
    let y = pooled_rows(b, 256);
    sq_dist_matrix(x.view(), y.view())
        .ok()
        .and_then(|c| c.mean())
        .unwrap_or(1.0)
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn simplex_project(v: ArrayView1<f64>) -> Result<BarycentricWeights> {
    BarycentricWeights::new(project_raw(v)?)
}

fn project_raw(v: ArrayView1<f64>) -> Result<Array1<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("cannot project an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("cannot project a non-finite vector".into()));
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &x) in u.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    Ok(v.mapv(|x| (x - theta).max(0.0)))
}

/// Row indices of each class.
fn class_rows(labels: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        rows[l].push(i);
    }
    rows
}

/// Draws `quotas[c]` rows of every class `c`, class by class. Draws are
/// without replacement when the class is large enough.
fn sample_stratified(rows: &[Vec<usize>], quotas: &[usize], rng: &mut Rng) -> Option<Vec<usize>> {
    let mut out = Vec::with_capacity(quotas.iter().sum());
    for (class_rows, &q) in rows.iter().zip(quotas) {
        if q == 0 {
            continue;
        }
        if class_rows.is_empty() {
            return None;
        }
        if class_rows.len() >= q {
            out.extend(sample(rng, class_rows.len(), q).into_iter().map(|i| class_rows[i]));
        } else {
            out.extend((0..q).map(|_| class_rows[rng.random_range(0..class_rows.len())]));
        }
    }
    Some(out)
}

fn select_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

/// Per-class atom sizes shared by every atom, from the average class
/// proportions across domains.
pub fn atom_class_quotas(domains: &[LabeledDistribution], n_atom: usize) -> Result<Vec<usize>> {
    let n_classes = domains
        .first()
        .ok_or_else(|| Error::InvalidArgument("no domains given".into()))?
        .n_classes();
    let mut shares = vec![0.0; n_classes];
    for d in domains {
        for (c, m) in d.class_mass().into_iter().enumerate() {
            shares[c] += m / domains.len() as f64;
        }
    }
    class_quotas(&shares, n_atom)
}

fn check_domains(domains: &[LabeledDistribution]) -> Result<(usize, usize)> {
    let first = domains
        .first()
        .ok_or_else(|| Error::InvalidArgument("no domains given".into()))?;
    let (d, n_classes) = (first.dim(), first.n_classes());
    for dom in domains {
        if dom.dim() != d {
            return Err(Error::DimensionMismatch {
                what: "feature dimension across domains",
                left: d,
                right: dom.dim(),
            });
        }
        if dom.n_classes() != n_classes {
            return Err(Error::DimensionMismatch {
                what: "n_classes across domains",
                left: n_classes,
                right: dom.n_classes(),
            });
        }
    }
    Ok((d, n_classes))
}

/// Class-stratified sample of `domain` with the given per-class sizes,
/// returned as an atom with rows grouped by class.
pub fn stratified_atom(
    domain: &LabeledDistribution,
    quotas: &[usize],
    domain_index: usize,
    rng: &mut Rng,
) -> Result<Atom> {
    let rows = class_rows(domain.labels(), domain.n_classes());
    for (c, (r, &q)) in rows.iter().zip(quotas).enumerate() {
        if r.len() < q {
            return Err(Error::InsufficientClassPoints {
                domain: domain_index,
                class: c,
                available: r.len(),
                needed: q,
            });
        }
    }
    let idx = sample_stratified(&rows, quotas, rng).expect("quotas checked above");
    let labels = idx.iter().map(|&i| domain.labels()[i]).collect();
    Atom::new(select_rows(domain.support(), &idx), labels, domain.n_classes())
}

/// One atom per domain: a class-stratified sample of that domain moved a
/// fraction `shift` of the way from its mean towards the pooled mean of the
/// other domains.
pub fn init_atoms(
    domains: &[LabeledDistribution],
    n_atom: usize,
    shift: f64,
    seed: u64,
) -> Result<Vec<Atom>> {
    check_domains(domains)?;
    if domains.len() < 2 {
        return Err(Error::InvalidArgument(
            "atom initialisation needs at least two domains (the mean of the other domains is undefined)"
                .into(),
        ));
    }
    if !(0.0..=1.0).contains(&shift) {
        return Err(Error::InvalidArgument(format!("shift must lie in [0, 1], got {shift}")));
    }
    let quotas = atom_class_quotas(domains, n_atom)?;
    let means: Vec<Array1<f64>> = domains.iter().map(|d| d.base().mean()).collect();
    let sizes: Vec<f64> = domains.iter().map(|d| d.len() as f64).collect();
    let mut rng = seeded(seed);
    let mut atoms = Vec::with_capacity(domains.len());
    for (k, dom) in domains.iter().enumerate() {
        let atom = stratified_atom(dom, &quotas, k, &mut rng)?;
        let mut others = Array1::zeros(dom.dim());
        let mut count = 0.0;
        for (l, (m, &n)) in means.iter().zip(&sizes).enumerate() {
            if l != k {
                others.scaled_add(n, m);
                count += n;
            }
        }
        others /= count;
        let offset = (&others - &means[k]) * shift;
        let support = atom.support() + &offset.insert_axis(Axis(0));
        atoms.push(Atom::new(support, atom.labels().to_vec(), dom.n_classes())?);
    }
    Ok(atoms)
}

/// Numerical settings of one reconstruction term.
#[derive(Debug, Clone)]
pub struct TermParams {
    pub epsilon: f64,
    pub beta: f64,
    /// Fixed-point steps of the inner barycenter.
    pub inner_steps: usize,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
}

/// Value and gradients of one reconstruction term.
#[derive(Debug, Clone)]
pub struct TermGradient {
    pub loss: f64,
    /// Gradient with respect to every atom minibatch, same shapes as the input.
    pub atom_grads: Vec<Array2<f64>>,
    pub alpha_grad: Array1<f64>,
    /// Barycenter support the loss was evaluated at.
    pub barycenter: Array2<f64>,
}

fn pair_cost(
    x: ArrayView2<f64>,
    lx: Option<&[usize]>,
    y: ArrayView2<f64>,
    ly: Option<&[usize]>,
    beta: f64,
) -> Result<CostMatrix> {
    let mut c = sq_dist_matrix(x, y)?;
    if let (Some(lx), Some(ly)) = (lx, ly) {
        add_label_penalty(&mut c, lx, ly, beta);
    }
    CostMatrix::new(c)
}

/// Entropic reconstruction loss of `target` by the barycenter of the atom
/// minibatches under `alpha`, with gradients.
///
/// All atom minibatches have `n` rows sharing `batch_labels`; the barycenter
/// starts at `sum_k alpha_k A_k` and takes `inner_steps` exact fixed-point
/// steps. When `target_labels` is `None` every cost is feature-only.
pub fn reconstruction_term(
    atom_batches: &[Array2<f64>],
    batch_labels: &[usize],
    alpha: ArrayView1<f64>,
    target: ArrayView2<f64>,
    target_labels: Option<&[usize]>,
    params: &TermParams,
) -> Result<TermGradient> {
    let k_atoms = atom_batches.len();
    if k_atoms == 0 || alpha.len() != k_atoms {
        return Err(Error::DimensionMismatch {
            what: "atoms vs alpha",
            left: k_atoms,
            right: alpha.len(),
        });
    }
    let (n, d) = atom_batches[0].dim();
    let lx = target_labels.map(|_| batch_labels);

    let mut x = Array2::<f64>::zeros((n, d));
    for (k, a) in atom_batches.iter().enumerate() {
        x.scaled_add(alpha[k], a);
    }
    let uniform = Array1::from_elem(n, 1.0 / n as f64);
    // P_k = n * pi_k, the row-stochastic correspondence to atom k
    let mut maps: Vec<Array2<f64>> = vec![Array2::eye(n); k_atoms];
    let mut mapped: Vec<Array2<f64>> = atom_batches.to_vec();
    for _ in 0..params.inner_steps {
        for k in 0..k_atoms {
            let c = pair_cost(x.view(), lx, atom_batches[k].view(), lx, params.beta)?;
            // equal uniform marginals: an optimal plan is a permutation
            let perm = hungarian(c.view());
            maps[k].fill(0.0);
            for (i, &j) in perm.iter().enumerate() {
                maps[k][[i, j]] = 1.0;
            }
            mapped[k] = atom_batches[k].select(Axis(0), &perm);
        }
        x.fill(0.0);
        for k in 0..k_atoms {
            x.scaled_add(alpha[k], &mapped[k]);
        }
    }

    let m = target.nrows();
    let b = Array1::from_elem(m, 1.0 / m as f64);
    let cost = pair_cost(x.view(), lx, target, target_labels, params.beta)?;
    let cfg = SinkhornConfig {
        epsilon: Some(params.epsilon),
        tol: params.sinkhorn_tol,
        max_iter: params.sinkhorn_max_iter,
        stabilization: Stabilization::Standard,
    };
    // scaling kernel first, log-domain only on underflow
    let sol = match sinkhorn(&cost, &uniform, &b, &cfg) {
        Err(Error::SinkhornUnderflow { .. }) => sinkhorn(
            &cost,
            &uniform,
            &b,
            &SinkhornConfig {
                stabilization: Stabilization::LogDomain,
                ..cfg
            },
        )?,
        other => other?,
    };
    let loss = sol.regularized_objective(&cost);
    let pi = sol.plan.coupling();

    // dL/dx_i = sum_j pi_ij * 2 (x_i - y_j)
    let row_mass = pi.sum_axis(Axis(1));
    let mut grad_x = &x * &row_mass.insert_axis(Axis(1));
    grad_x -= &pi.dot(&target);
    grad_x *= 2.0;

    let atom_grads = maps.iter().enumerate().map(|(k, p)| p.t().dot(&grad_x) * alpha[k]).collect();
    let alpha_grad = Array1::from_shape_fn(k_atoms, |k| {
        grad_x.iter().zip(mapped[k].iter()).map(|(g, y)| g * y).sum()
    });
    Ok(TermGradient {
        loss,
        atom_grads,
        alpha_grad,
        barycenter: x,
    })
}

/// Hyperparameters of [`train_dictionary`]. `None` fields take data-driven
/// defaults when training starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryConfig {
    /// Support size of every atom; default `min(smallest domain, 200)`.
    pub n_atom: Option<usize>,
    /// Fraction of the way atoms are moved towards the other domains' mean.
    pub shift: f64,
    pub lr: f64,
    /// Minibatch size per domain; default `8 * n_classes`.
    pub batch_size: Option<usize>,
    pub n_iter: usize,
    /// Entropic regularisation; default `0.1 *` mean feature cost.
    pub epsilon: Option<f64>,
    /// Label penalty; default from [`default_label_penalty`].
    pub beta: Option<f64>,
    pub inner_steps: usize,
    pub learn_coords: bool,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    pub seed: u64,
}

impl Default for DictionaryConfig {
    fn default() -> Self {
        Self {
            n_atom: None,
            shift: 0.1,
            lr: 0.1,
            batch_size: None,
            n_iter: 200,
            epsilon: None,
            beta: None,
            inner_steps: 5,
            learn_coords: true,
            sinkhorn_tol: 1e-9,
            sinkhorn_max_iter: 1000,
            seed: 0,
        }
    }
}

/// Starting point of dictionary training.
#[derive(Debug, Clone)]
pub enum DictionaryInit {
    /// [`init_atoms`] on the training domains, uniform coordinates.
    FromDomains,
    /// Given atoms; coordinates default to uniform.
    Atoms {
        atoms: Vec<Atom>,
        coords: Option<Array2<f64>>,
    },
    /// Continue from an earlier dictionary, keeping its atoms, coordinates,
    /// epsilon and beta.
    Warm(Box<Dictionary>),
}

/// Learned atoms plus one row of barycentric coordinates per training domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    atoms: Vec<Atom>,
    coords: Array2<f64>,
    n_classes: usize,
    epsilon: f64,
    beta: f64,
    config: DictionaryConfig,
    loss_trace: Vec<f64>,
}

impl Dictionary {
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn coords(&self) -> &Array2<f64> {
        &self.coords
    }

    pub fn coords_row(&self, domain: usize) -> Result<BarycentricWeights> {
        if domain >= self.coords.nrows() {
            return Err(Error::InvalidArgument(format!("no coordinates for domain {domain}")));
        }
        BarycentricWeights::new(self.coords.row(domain).to_owned())
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].content.dim()
    }

    pub fn atom_size(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn config(&self) -> &DictionaryConfig {
        &self.config
    }

    /// Minibatch loss recorded at every training iteration.
    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    /// Feature clouds of the atoms, labels dropped.
    pub fn atom_features(&self) -> Vec<DiscreteDistribution> {
        self.atoms.iter().map(|a| a.features().clone()).collect()
    }

    /// Exact labeled Wasserstein distance between every domain and its
    /// reconstruction (full-size labeled barycenter of the atoms).
    pub fn reconstruction_errors(&self, domains: &[LabeledDistribution], seed: u64) -> Result<Vec<f64>> {
        let family: Vec<LabeledDistribution> = self.atoms.iter().map(|a| a.content.clone()).collect();
        domains
            .iter()
            .enumerate()
            .map(|(l, dom)| {
                let alpha = self.coords_row(l)?;
                let cfg = LabeledBarycenterConfig {
                    beta: Some(self.beta),
                    ..LabeledBarycenterConfig::new(self.atom_size(), derive(seed, l as u64))
                };
                let bary = labeled_barycenter(&family, &alpha, &cfg)?.barycenter;
                let c = labeled_ground_cost(&bary, dom, self.beta)?;
                Ok(solve_exact_ot(&c, bary.weights(), dom.weights())?.cost(&c))
            })
            .collect()
    }
}

/// What the observer sees after every training step.
#[derive(Debug)]
pub struct StepInfo<'a> {
    pub iteration: usize,
    pub loss: f64,
    pub coords: &'a Array2<f64>,
    pub atoms: &'a [Array2<f64>],
}

pub fn train_dictionary(
    domains: &[LabeledDistribution],
    cfg: &DictionaryConfig,
    init: DictionaryInit,
) -> Result<Dictionary> {
    train_dictionary_observed(domains, cfg, init, |_| {})
}

/// Default atom size for a set of domains.
pub fn default_atom_size(domains: &[LabeledDistribution]) -> usize {
    domains
        .iter()
        .map(|d| d.len())
        .min()
        .unwrap_or(1)
        .min(MAX_DEFAULT_ATOM_SIZE)
}

/// [`train_dictionary`] with a callback after every step.
pub fn train_dictionary_observed(
    domains: &[LabeledDistribution],
    cfg: &DictionaryConfig,
    init: DictionaryInit,
    mut observer: impl FnMut(&StepInfo),
) -> Result<Dictionary> {
    let (d, n_classes) = check_domains(domains)?;
    if !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument(format!("lr must be positive, got {}", cfg.lr)));
    }
    let batch_size = cfg.batch_size.unwrap_or(8 * n_classes);
    if batch_size < n_classes {
        return Err(Error::InvalidArgument(format!(
            "batch_size = {batch_size} is smaller than n_classes = {n_classes}"
        )));
    }

    let (atoms, coords, warm_eps, warm_beta) = match init {
        DictionaryInit::FromDomains => {
            let n_atom = cfg.n_atom.unwrap_or_else(|| default_atom_size(domains));
            let atoms = init_atoms(domains, n_atom, cfg.shift, derive(cfg.seed, 1))?;
            (atoms, None, None, None)
        }
        DictionaryInit::Atoms { atoms, coords } => (atoms, coords, None, None),
        DictionaryInit::Warm(dict) => {
            let dict = *dict;
            (dict.atoms, Some(dict.coords), Some(dict.epsilon), Some(dict.beta))
        }
    };
    let k_atoms = atoms.len();
    if k_atoms == 0 {
        return Err(Error::InvalidArgument("dictionary needs at least one atom".into()));
    }
    for a in &atoms {
        if a.content.dim() != d || a.content.n_classes() != n_classes {
            return Err(Error::DimensionMismatch {
                what: "atom dimension vs domains",
                left: a.content.dim(),
                right: d,
            });
        }
    }
    let n_domains = domains.len();
    let mut coords = match coords {
        Some(c) => {
            if c.dim() != (n_domains, k_atoms) {
                return Err(Error::DimensionMismatch {
                    what: "coordinate rows vs domains",
                    left: c.nrows(),
                    right: n_domains,
                });
            }
            for row in c.outer_iter() {
                crate::ot::check_simplex(row, "dictionary coordinates")?;
            }
            c
        }
        None => Array2::from_elem((n_domains, k_atoms), 1.0 / k_atoms as f64),
    };

    let domain_refs: Vec<&DiscreteDistribution> = domains.iter().map(|d| d.base()).collect();
    let atom_refs: Vec<&DiscreteDistribution> = atoms.iter().map(|a| a.features()).collect();
    let scale = {
        let s = mean_feature_cost(&domain_refs, &atom_refs);
        if s > 0.0 {
            s
        } else {
            1.0
        }
    };
    let epsilon = cfg.epsilon.or(warm_eps).unwrap_or(0.1 * scale);
    let beta = cfg.beta.or(warm_beta).unwrap_or_else(|| default_label_penalty(&domain_refs));
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let params = TermParams {
        epsilon,
        beta,
        inner_steps: cfg.inner_steps,
        sinkhorn_tol: cfg.sinkhorn_tol,
        sinkhorn_max_iter: cfg.sinkhorn_max_iter,
    };

    let atom_labels: Vec<Vec<usize>> = atoms.iter().map(|a| a.labels().to_vec()).collect();
    let atom_class_rows: Vec<Vec<Vec<usize>>> =
        atom_labels.iter().map(|l| class_rows(l, n_classes)).collect();
    let domain_class_rows: Vec<Vec<Vec<usize>>> =
        domains.iter().map(|dom| class_rows(dom.labels(), n_classes)).collect();
    let batch_quotas: Vec<Vec<usize>> = domains
        .iter()
        .map(|dom| largest_remainder(&dom.class_mass(), batch_size))
        .collect();
    let mut supports: Vec<Array2<f64>> = atoms.into_iter().map(|a| a.content.support().clone()).collect();

    let mut rng = seeded(derive(cfg.seed, 2));
    let mut loss_trace = Vec::with_capacity(cfg.n_iter);
    for iteration in 0..cfg.n_iter {
        // sampling stays sequential so the stream does not depend on scheduling
        let mut batches = Vec::with_capacity(n_domains);
        for l in 0..n_domains {
            let quotas = &batch_quotas[l];
            let atom_idx: Vec<Vec<usize>> = atom_class_rows
                .iter()
                .enumerate()
                .map(|(k, rows)| {
                    sample_stratified(rows, quotas, &mut rng).ok_or_else(|| {
                        Error::InvalidArgument(format!("atom {k} lacks a class required by domain {l}"))
                    })
                })
                .collect::<Result<_>>()?;
            let dom_idx = sample_stratified(&domain_class_rows[l], quotas, &mut rng)
                .expect("batch quotas are zero for empty classes");
            batches.push((atom_idx, dom_idx));
        }

        let terms: Vec<TermGradient> = batches
            .par_iter()
            .enumerate()
            .map(|(l, (atom_idx, dom_idx))| {
                let atom_batches: Vec<Array2<f64>> = atom_idx
                    .iter()
                    .zip(&supports)
                    .map(|(idx, s)| select_rows(s, idx))
                    .collect();
                let labels: Vec<usize> = atom_idx[0].iter().map(|&i| atom_labels[0][i]).collect();
                let target = select_rows(domains[l].support(), dom_idx);
                let target_labels: Vec<usize> = dom_idx.iter().map(|&i| domains[l].labels()[i]).collect();
                reconstruction_term(
                    &atom_batches,
                    &labels,
                    coords.row(l),
                    target.view(),
                    Some(&target_labels),
                    &params,
                )
            })
            .collect::<Result<_>>()
            .map_err(|e| match e {
                Error::SinkhornUnderflow { .. } => Error::NonFiniteLoss { iteration },
                other => other,
            })?;

        let loss: f64 = terms.iter().map(|t| t.loss).sum();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
        loss_trace.push(loss);

        // atom rows: step preconditioned by the inverse point weight
        for (l, term) in terms.iter().enumerate() {
            let n_b = term.barycenter.nrows() as f64;
            for (k, g) in term.atom_grads.iter().enumerate() {
                for (r, &row) in batches[l].0[k].iter().enumerate() {
                    let mut dst = supports[k].row_mut(row);
                    dst.scaled_add(-cfg.lr * n_b, &g.row(r));
                }
            }
        }
        if cfg.learn_coords {
            for (l, term) in terms.iter().enumerate() {
                let step = &coords.row(l) - &(&term.alpha_grad * (cfg.lr / scale));
                coords.row_mut(l).assign(&project_raw(step.view())?);
            }
        }
        if supports.iter().any(|s| s.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFiniteLoss { iteration });
        }
        observer(&StepInfo {
            iteration,
            loss,
            coords: &coords,
            atoms: &supports,
        });
    }

    let atoms = supports
        .into_iter()
        .zip(atom_labels)
        .map(|(s, l)| Atom::new(s, l, n_classes))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dictionary {
        atoms,
        coords,
        n_classes,
        epsilon,
        beta,
        config: cfg.clone(),
        loss_trace,
    })
}

/// Settings of [`barycentric_regression`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    pub lr: f64,
    pub n_iter: usize,
    /// Entropic regularisation; default `0.1 *` mean feature cost.
    pub epsilon: Option<f64>,
    /// Points drawn per atom and from the target each step; default 64.
    pub batch_size: Option<usize>,
    pub inner_steps: usize,
    pub seed: u64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            n_iter: 100,
            epsilon: None,
            batch_size: None,
            inner_steps: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegressionResult {
    pub alpha: BarycentricWeights,
    /// Mean minibatch loss over the averaging window.
    pub objective: f64,
    pub loss_trace: Vec<f64>,
}

/// Fits barycentric coordinates of an unlabeled `target` on frozen atoms by
/// projected gradient descent. Costs ignore atom labels. The returned weights
/// average the iterates of the second half of the run.
pub fn barycentric_regression(
    atoms: &[Atom],
    target: &DiscreteDistribution,
    cfg: &RegressionConfig,
) -> Result<RegressionResult> {
    let k_atoms = atoms.len();
    if k_atoms == 0 {
        return Err(Error::InvalidArgument("regression needs at least one atom".into()));
    }
    let d = atoms[0].content.dim();
    for a in atoms {
        if a.content.dim() != d || a.len() != atoms[0].len() {
            return Err(Error::DimensionMismatch {
                what: "atom shapes",
                left: atoms[0].len(),
                right: a.len(),
            });
        }
    }
    if target.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "target vs atom feature dimension",
            left: target.dim(),
            right: d,
        });
    }
    if !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument(format!("lr must be positive, got {}", cfg.lr)));
    }
    if k_atoms == 1 {
        return Ok(RegressionResult {
            alpha: BarycentricWeights::uniform(1)?,
            objective: 0.0,
            loss_trace: Vec::new(),
        });
    }

    let atom_refs: Vec<&DiscreteDistribution> = atoms.iter().map(|a| a.features()).collect();
    let scale = {
        let s = mean_feature_cost(&[target], &atom_refs);
        if s > 0.0 {
            s
        } else {
            1.0
        }
    };
    let epsilon = cfg.epsilon.unwrap_or(0.1 * scale);
    let params = TermParams {
        epsilon,
        beta: 0.0,
        inner_steps: cfg.inner_steps,
        sinkhorn_tol: 1e-9,
        sinkhorn_max_iter: 1000,
    };
    let n_atom = atoms[0].len();
    let batch = cfg.batch_size.unwrap_or(64).min(n_atom).max(1);
    let n_target = target.len();
    let target_batch = batch.min(n_target);

    let mut rng = seeded(derive(cfg.seed, 3));
    let mut alpha = Array1::from_elem(k_atoms, 1.0 / k_atoms as f64);
    let mut avg = Array1::zeros(k_atoms);
    let mut avg_loss = 0.0;
    let mut averaged = 0usize;
    let burn_in = cfg.n_iter / 2;
    let mut loss_trace = Vec::with_capacity(cfg.n_iter);
    let labels = vec![0usize; batch];
    for it in 0..cfg.n_iter {
        // shared row indices keep the class-grouped rows of the atoms aligned
        let idx: Vec<usize> = if batch == n_atom {
            (0..n_atom).collect()
        } else {
            let mut v = sample(&mut rng, n_atom, batch).into_vec();
            v.sort_unstable();
            v
        };
        let atom_batches: Vec<Array2<f64>> = atoms.iter().map(|a| select_rows(a.support(), &idx)).collect();
        let t_idx: Vec<usize> = if target_batch == n_target {
            (0..n_target).collect()
        } else {
            sample(&mut rng, n_target, target_batch).into_vec()
        };
        let tgt = select_rows(target.support(), &t_idx);
        let term = reconstruction_term(&atom_batches, &labels, alpha.view(), tgt.view(), None, &params)?;
        if !term.loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        loss_trace.push(term.loss);
        if it >= burn_in {
            avg += &alpha;
            avg_loss += term.loss;
            averaged += 1;
        }
        let step = &alpha - &(&term.alpha_grad * (cfg.lr / scale));
        alpha = project_raw(step.view())?;
    }
    let alpha = if averaged == 0 {
        alpha
    } else {
        let a = avg / averaged as f64;
        let s = a.sum();
        a / s
    };
    Ok(RegressionResult {
        alpha: BarycentricWeights::new(alpha)?,
        objective: if averaged == 0 { 0.0 } else { avg_loss / averaged as f64 },
        loss_trace,
    })
}

/// Format tag written into every dictionary archive.
pub const DICTIONARY_FORMAT: &str = "udadil-dict-v1";

#[derive(Debug, Serialize, Deserialize)]
struct DictionaryArchive {
    format: String,
    n_atoms: usize,
    atom_size: usize,
    dim: usize,
    n_classes: usize,
    dictionary: Dictionary,
}

impl Dictionary {
    pub(crate) fn to_archive_value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(DictionaryArchive {
            format: DICTIONARY_FORMAT.into(),
            n_atoms: self.n_atoms(),
            atom_size: self.atom_size(),
            dim: self.dim(),
            n_classes: self.n_classes,
            dictionary: self.clone(),
        })?)
    }

    pub(crate) fn from_archive_value(v: serde_json::Value) -> Result<Self> {
        let archive: DictionaryArchive = serde_json::from_value(v)?;
        if archive.format != DICTIONARY_FORMAT {
            return Err(Error::Format(format!(
                "expected {DICTIONARY_FORMAT}, found {}",
                archive.format
            )));
        }
        let dict = archive.dictionary;
        dict.validate()?;
        if (archive.n_atoms, archive.atom_size, archive.dim, archive.n_classes)
            != (dict.n_atoms(), dict.atom_size(), dict.dim(), dict.n_classes)
        {
            return Err(Error::Format("archive header does not match its contents".into()));
        }
        Ok(dict)
    }

    fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(Error::Format("dictionary has no atoms".into()));
        }
        let (n, d) = self.atoms[0].support().dim();
        for a in &self.atoms {
            if a.support().dim() != (n, d) || a.content.n_classes() != self.n_classes {
                return Err(Error::Format("atoms disagree in shape".into()));
            }
        }
        if self.coords.ncols() != self.atoms.len() {
            return Err(Error::Format("coordinate columns do not match atom count".into()));
        }
        for row in self.coords.outer_iter() {
            crate::ot::check_simplex(row, "dictionary coordinates")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(&self.to_archive_value()?)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_archive_value(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn labeled(points: Array2<f64>, labels: Vec<usize>, k: usize) -> LabeledDistribution {
        LabeledDistribution::uniform(points, labels, k).unwrap()
    }

    #[test]
    fn simplex_projection_examples() {
        let p = simplex_project(array![0.3, 0.7].view()).unwrap();
        assert_abs_diff_eq!(p.as_array()[0], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(p.as_array()[1], 0.7, epsilon = 1e-12);
        assert_eq!(simplex_project(array![2.0, 0.0].view()).unwrap().as_array(), &array![1.0, 0.0]);
        let p = simplex_project(array![0.5, 0.5, 0.5].view()).unwrap();
        for x in p.as_array() {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert!(simplex_project(Array1::<f64>::zeros(0).view()).is_err());
        assert!(simplex_project(array![f64::NAN].view()).is_err());
    }

    #[test]
    fn labeled_cost_examples() {
        let a = labeled(array![[0.0], [1.0]], vec![0, 1], 2);
        let b = labeled(array![[3.0], [4.0]], vec![0, 0], 2);
        let plain = sq_dist_matrix(a.support().view(), b.support().view()).unwrap();
        assert_eq!(labeled_ground_cost(&a, &b, 0.0).unwrap().entries(), &plain);
        let c = labeled_ground_cost(&a, &b, 100.0).unwrap();
        assert_eq!(c.entries()[[0, 0]], 9.0);
        assert_eq!(c.entries()[[1, 1]], 109.0);
        assert!(labeled_ground_cost(&a, &b, -1.0).is_err());
    }

    #[test]
    fn large_beta_forbids_cross_label_mass() {
        // geometry alone prefers the anti-diagonal; labels force the diagonal
        let a = labeled(array![[0.0], [10.0]], vec![0, 1], 2);
        let b = labeled(array![[9.0], [1.0]], vec![0, 1], 2);
        let c = labeled_ground_cost(&a, &b, 1e4).unwrap();
        let plan = solve_exact_ot(&c, a.weights(), b.weights()).unwrap();
        // brute force over the two vertex couplings
        let diag = 0.5 * (c.entries()[[0, 0]] + c.entries()[[1, 1]]);
        let anti = 0.5 * (c.entries()[[0, 1]] + c.entries()[[1, 0]]);
        assert!(diag < anti);
        assert_eq!(plan.coupling()[[0, 1]], 0.0);
        assert_eq!(plan.coupling()[[1, 0]], 0.0);
    }

    #[test]
    fn init_atoms_shift_moves_by_mean_gap() {
        let d0 = labeled(array![[-1.0], [1.0], [-0.5], [0.5]], vec![0, 0, 1, 1], 2);
        let d1 = labeled(array![[9.0], [11.0], [9.5], [10.5]], vec![0, 0, 1, 1], 2);
        let plain = init_atoms(&[d0.clone(), d1.clone()], 4, 0.0, 7).unwrap();
        let shifted = init_atoms(&[d0, d1], 4, 0.1, 7).unwrap();
        let diff0 = shifted[0].support() - plain[0].support();
        let diff1 = shifted[1].support() - plain[1].support();
        assert!(diff0.iter().all(|x| (x - 1.0).abs() < 1e-12));
        assert!(diff1.iter().all(|x| (x + 1.0).abs() < 1e-12));
        assert_eq!(plain[0].labels(), &[0, 0, 1, 1]);
    }

    #[test]
    fn init_atoms_zero_shift_samples_domain_points() {
        let d0 = labeled(array![[0.0], [1.0], [2.0], [3.0]], vec![0, 1, 0, 1], 2);
        let d1 = labeled(array![[5.0], [6.0], [7.0], [8.0]], vec![0, 1, 0, 1], 2);
        let atoms = init_atoms(&[d0.clone(), d1], 2, 0.0, 1).unwrap();
        for (row, &l) in atoms[0].support().outer_iter().zip(atoms[0].labels()) {
            let found = d0
                .support()
                .outer_iter()
                .zip(d0.labels())
                .any(|(r, &dl)| r == row && dl == l);
            assert!(found);
        }
    }

    #[test]
    fn init_atoms_errors() {
        let d0 = labeled(array![[0.0], [1.0]], vec![0, 1], 2);
        assert!(init_atoms(std::slice::from_ref(&d0), 2, 0.1, 0).is_err());
        let d1 = labeled(array![[0.0], [1.0], [2.0]], vec![0, 0, 1], 2);
        // quota is 2 per class with n_atom = 4; d0 has one point per class
        match init_atoms(&[d0, d1], 4, 0.1, 0) {
            Err(Error::InsufficientClassPoints { domain, .. }) => assert_eq!(domain, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn training_rejects_bad_hyperparameters() {
        let d0 = labeled(array![[0.0], [1.0]], vec![0, 1], 2);
        let d1 = labeled(array![[0.5], [1.5]], vec![0, 1], 2);
        let doms = [d0, d1];
        let bad_lr = DictionaryConfig { lr: 0.0, ..Default::default() };
        assert!(train_dictionary(&doms, &bad_lr, DictionaryInit::FromDomains).is_err());
        let bad_batch = DictionaryConfig { batch_size: Some(1), ..Default::default() };
        assert!(train_dictionary(&doms, &bad_batch, DictionaryInit::FromDomains).is_err());
    }

    #[test]
    fn zero_iterations_keeps_initialisation() {
        let d0 = labeled(array![[0.0], [1.0], [2.0], [3.0]], vec![0, 1, 0, 1], 2);
        let d1 = labeled(array![[5.0], [6.0], [7.0], [8.0]], vec![0, 1, 0, 1], 2);
        let cfg = DictionaryConfig { n_iter: 0, n_atom: Some(2), ..Default::default() };
        let dict = train_dictionary(&[d0, d1], &cfg, DictionaryInit::FromDomains).unwrap();
        assert!(dict.loss_trace().is_empty());
        assert_eq!(dict.coords(), &array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn regression_single_atom_is_trivial() {
        let atom = Atom::new(array![[0.0, 0.0], [1.0, 1.0]], vec![0, 1], 2).unwrap();
        let target = DiscreteDistribution::uniform(array![[50.0, -3.0]]).unwrap();
        let r = barycentric_regression(&[atom], &target, &RegressionConfig::default()).unwrap();
        assert_eq!(r.alpha.as_array(), &array![1.0]);
    }

    #[test]
    fn archive_rejects_wrong_tag() {
        let d0 = labeled(array![[0.0], [1.0], [2.0], [3.0]], vec![0, 1, 0, 1], 2);
        let d1 = labeled(array![[5.0], [6.0], [7.0], [8.0]], vec![0, 1, 0, 1], 2);
        let cfg = DictionaryConfig { n_iter: 0, n_atom: Some(2), ..Default::default() };
        let dict = train_dictionary(&[d0, d1], &cfg, DictionaryInit::FromDomains).unwrap();
        let mut v = dict.to_archive_value().unwrap();
        assert_eq!(Dictionary::from_archive_value(v.clone()).unwrap(), dict);
        v["format"] = serde_json::Value::String("something-else".into());
        assert!(matches!(Dictionary::from_archive_value(v), Err(Error::Format(_))));
    }
}
