//! Training over several source domains and clustering of an unseen target.
//!
//! Training alternates dictionary learning with re-clustering: k-means
//! pseudo-labels seed a labeled dictionary, each domain's barycenter of the
//! atoms yields `n_clusters` prototypes, the prototypes are pushed onto the
//! domain by a barycentric map and every point joins its nearest centroid.
//! Labels are kept consistent across domains by [`crate::alignment`].

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{align_named, solve_assignment, ClusterAssignment};
use crate::barycenter::{free_support_barycenter, BarycenterConfig, BarycentricWeights, LabeledDistribution};
use crate::dictionary::{
    atom_class_quotas, barycentric_regression, default_atom_size, train_dictionary, Dictionary,
    DictionaryConfig, DictionaryInit, RegressionConfig,
};
use crate::metrics::{kmeans, nearest, KMeansConfig};
use crate::ot::{barycentric_map, solve_exact_ot, squared_euclidean_cost, DiscreteDistribution};
use crate::rng::derive;
use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "udadil-model-v1";

/// What training and inference are allowed to see of a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainFeatures {
    pub name: String,
    pub features: Array2<f64>,
}

impl DomainFeatures {
    pub fn new(name: impl Into<String>, features: Array2<f64>) -> Result<Self> {
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("features contain NaN or infinite values".into()));
        }
        Ok(Self {
            name: name.into(),
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn cloud(&self) -> Result<DiscreteDistribution> {
        DiscreteDistribution::uniform(self.features.clone())
    }
}

/// A domain together with optional ground truth, used only for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub data: DomainFeatures,
    pub truth_labels: Option<Vec<usize>>,
}

impl DomainDataset {
    pub fn new(name: impl Into<String>, features: Array2<f64>, truth_labels: Option<Vec<usize>>) -> Result<Self> {
        let data = DomainFeatures::new(name, features)?;
        if let Some(t) = &truth_labels {
            if t.len() != data.len() {
                return Err(Error::DimensionMismatch {
                    what: "truth labels vs points",
                    left: t.len(),
                    right: data.len(),
                });
            }
        }
        Ok(Self { data, truth_labels })
    }

    pub fn name(&self) -> &str {
        &self.data.name
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.data.features
    }
}

/// Settings of [`train`] and [`infer`]. The seeds inside `dictionary` and
/// `regression` are ignored; every stream is derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub n_clusters: usize,
    pub rounds: usize,
    /// Training stops once no domain changes more than this fraction of labels.
    pub change_tol: f64,
    /// Name of the domain whose cluster indices the others follow; default first.
    pub reference_domain: Option<String>,
    pub dictionary: DictionaryConfig,
    pub regression: RegressionConfig,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub barycenter_tol: f64,
    pub barycenter_max_iter: usize,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(n_clusters: usize, seed: u64) -> Self {
        Self {
            n_clusters,
            rounds: 3,
            change_tol: 0.01,
            reference_domain: None,
            dictionary: DictionaryConfig::default(),
            regression: RegressionConfig::default(),
            kmeans_restarts: 10,
            kmeans_max_iter: 300,
            barycenter_tol: 1e-5,
            barycenter_max_iter: 100,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 {
            return Err(Error::InvalidArgument("n_clusters must be at least 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("rounds must be at least 1".into()));
        }
        if self.kmeans_restarts == 0 || self.kmeans_max_iter == 0 || self.barycenter_max_iter == 0 {
            return Err(Error::InvalidArgument("iteration and restart counts must be at least 1".into()));
        }
        if !(self.change_tol >= 0.0) || !(self.barycenter_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        Ok(())
    }

    fn centroid_settings(&self) -> CentroidSettings {
        CentroidSettings {
            tol: self.barycenter_tol,
            max_iter: self.barycenter_max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct CentroidSettings {
    tol: f64,
    max_iter: usize,
}

impl Default for CentroidSettings {
    fn default() -> Self {
        let b = BarycenterConfig::new(1, 0);
        Self {
            tol: b.tol,
            max_iter: b.max_iter,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// Mean minibatch loss over the last tenth of the dictionary iterations.
    pub dictionary_loss: f64,
    /// Per domain, the fraction of points whose label changed this round.
    pub label_change: Vec<f64>,
    pub empty_clusters_refilled: usize,
}

/// Outcome of [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    dictionary: Dictionary,
    reference_domain: String,
    domain_names: Vec<String>,
    centroids: Vec<Array2<f64>>,
    assignments: Vec<ClusterAssignment>,
    n_clusters: usize,
    dim: usize,
    config: PipelineConfig,
    log: Vec<RoundLog>,
}

impl ClusterModel {
    pub fn dictionary(&self) -> &Dictionary {
        &self.dictionary
    }

    pub fn reference_domain(&self) -> &str {
        &self.reference_domain
    }

    pub fn domain_names(&self) -> &[String] {
        &self.domain_names
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn log(&self) -> &[RoundLog] {
        &self.log
    }

    pub fn centroids(&self, domain: &str) -> Option<&Array2<f64>> {
        self.index_of(domain).map(|i| &self.centroids[i])
    }

    /// Final training labels of a source domain.
    pub fn assignment(&self, domain: &str) -> Option<&ClusterAssignment> {
        self.index_of(domain).map(|i| &self.assignments[i])
    }

    fn index_of(&self, domain: &str) -> Option<usize> {
        self.domain_names.iter().position(|n| n == domain)
    }

    fn validate(&self) -> Result<()> {
        let m = self.domain_names.len();
        if self.centroids.len() != m || self.assignments.len() != m || self.dictionary.coords().nrows() != m {
            return Err(Error::Format("per-domain entries disagree in count".into()));
        }
        if !self.domain_names.contains(&self.reference_domain) {
            return Err(Error::Format(format!("unknown reference domain {}", self.reference_domain)));
        }
        if self.dictionary.dim() != self.dim {
            return Err(Error::Format("dictionary dimension does not match the model".into()));
        }
        for c in &self.centroids {
            if c.dim() != (self.n_clusters, self.dim) || c.iter().any(|x| !x.is_finite()) {
                return Err(Error::Format("malformed centroid matrix".into()));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ModelArchive {
    format: String,
    dictionary: serde_json::Value,
    reference_domain: String,
    domain_names: Vec<String>,
    centroids: Vec<Array2<f64>>,
    assignments: Vec<ClusterAssignment>,
    n_clusters: usize,
    dim: usize,
    config: PipelineConfig,
    log: Vec<RoundLog>,
}

impl ClusterModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelArchive {
            format: MODEL_FORMAT.into(),
            dictionary: self.dictionary.to_archive_value()?,
            reference_domain: self.reference_domain.clone(),
            domain_names: self.domain_names.clone(),
            centroids: self.centroids.clone(),
            assignments: self.assignments.clone(),
            n_clusters: self.n_clusters,
            dim: self.dim,
            config: self.config.clone(),
            log: self.log.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: ModelArchive = serde_json::from_str(text)?;
        if a.format != MODEL_FORMAT {
            return Err(Error::Format(format!("expected {MODEL_FORMAT}, found {}", a.format)));
        }
        let model = Self {
            dictionary: Dictionary::from_archive_value(a.dictionary)?,
            reference_domain: a.reference_domain,
            domain_names: a.domain_names,
            centroids: a.centroids,
            assignments: a.assignments,
            n_clusters: a.n_clusters,
            dim: a.dim,
            config: a.config,
            log: a.log,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// K-means pseudo-labels with random-point initialisation.
pub fn generate_pseudo_labels(domain: &DomainFeatures, n_clusters: usize, seed: u64) -> Result<ClusterAssignment> {
    pseudo_labels(domain, n_clusters, 10, 300, seed)
}

fn pseudo_labels(
    domain: &DomainFeatures,
    n_clusters: usize,
    restarts: usize,
    max_iter: usize,
    seed: u64,
) -> Result<ClusterAssignment> {
    let cfg = KMeansConfig {
        k: n_clusters,
        max_iter,
        n_restarts: restarts,
        seed,
    };
    Ok(kmeans(domain.features.view(), &cfg)?.assignment)
}

/// Centroids of `domain`: the `n_clusters`-point barycenter of the atom
/// feature clouds under `alpha`, sorted lexicographically, then displaced onto
/// the domain by the barycentric map of an exact transport plan.
pub fn compute_domain_centroids(
    dictionary: &Dictionary,
    alpha: &BarycentricWeights,
    domain: &DomainFeatures,
    n_clusters: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    centroids_with(dictionary, alpha, domain, n_clusters, seed, CentroidSettings::default())
}

fn centroids_with(
    dictionary: &Dictionary,
    alpha: &BarycentricWeights,
    domain: &DomainFeatures,
    n_clusters: usize,
    seed: u64,
    settings: CentroidSettings,
) -> Result<Array2<f64>> {
    if n_clusters == 0 {
        return Err(Error::InvalidArgument("n_clusters must be at least 1".into()));
    }
    if domain.dim() != dictionary.dim() {
        return Err(Error::DimensionMismatch {
            what: "domain vs dictionary feature dimension",
            left: domain.dim(),
            right: dictionary.dim(),
        });
    }
    let family = dictionary.atom_features();
    let mut bcfg = BarycenterConfig::new(n_clusters, seed);
    bcfg.tol = settings.tol;
    bcfg.max_iter = settings.max_iter;
    let prototypes = free_support_barycenter(&family, alpha, &bcfg)?.barycenter.into_support();
    let prototypes = sort_rows(prototypes.view());

    let source = DiscreteDistribution::uniform(prototypes)?;
    let target = domain.cloud()?;
    let cost = squared_euclidean_cost(&source, &target)?;
    let plan = solve_exact_ot(&cost, source.weights(), target.weights())?;
    barycentric_map(&plan, target.support().view())
}

fn sort_rows(x: ArrayView2<f64>) -> Array2<f64> {
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b).iter())
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    x.select(ndarray::Axis(0), &order)
}

/// Nearest-centroid labels; ties go to the lowest centroid index.
pub fn assign_clusters(features: ArrayView2<f64>, centroids: ArrayView2<f64>) -> Result<ClusterAssignment> {
    if centroids.nrows() == 0 {
        return Err(Error::InvalidArgument("no centroids given".into()));
    }
    if features.ncols() != centroids.ncols() {
        return Err(Error::DimensionMismatch {
            what: "features vs centroids",
            left: features.ncols(),
            right: centroids.ncols(),
        });
    }
    let labels = features.outer_iter().map(|x| nearest(x, centroids).0).collect();
    ClusterAssignment::new(labels, centroids.nrows())
}

/// Moves one point into every empty cluster: the point whose distance to the
/// empty cluster's centroid exceeds its current distance by the least, taken
/// from clusters that keep at least one member. Returns the number of moves.
fn refill_empty(
    features: ArrayView2<f64>,
    centroids: ArrayView2<f64>,
    assignment: &mut ClusterAssignment,
) -> Result<usize> {
    let mut labels = assignment.labels().to_vec();
    let mut sizes = assignment.sizes();
    let sq = |i: usize, j: usize| -> f64 {
        features
            .row(i)
            .iter()
            .zip(centroids.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    let mut moved = 0;
    for j in 0..sizes.len() {
        if sizes[j] > 0 {
            continue;
        }
        let best = (0..labels.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .map(|i| (i, sq(i, j) - sq(i, labels[i])))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let Some((i, _)) = best else {
            break;
        };
        sizes[labels[i]] -= 1;
        labels[i] = j;
        sizes[j] += 1;
        moved += 1;
    }
    *assignment = ClusterAssignment::new(labels, sizes.len())?;
    Ok(moved)
}

/// Renames the clusters of `new` to agree as much as possible with `old`
/// on the same points.
fn match_to_previous(old: &ClusterAssignment, new: &ClusterAssignment) -> Result<ClusterAssignment> {
    let k = new.n_clusters();
    let mut counts = Array2::<f64>::zeros((k, k));
    for (&n, &o) in new.labels().iter().zip(old.labels()) {
        counts[[n, o]] -= 1.0;
    }
    new.relabel(&solve_assignment(counts.view())?)
}

fn fraction_changed(a: &ClusterAssignment, b: &ClusterAssignment) -> f64 {
    let diff = a.labels().iter().zip(b.labels()).filter(|(x, y)| x != y).count();
    diff as f64 / a.len().max(1) as f64
}

fn align_all(
    clouds: &[DiscreteDistribution],
    labels: &[ClusterAssignment],
    names: &[String],
    reference: usize,
    seed: u64,
) -> Result<Vec<ClusterAssignment>> {
    let others: Vec<usize> = (0..clouds.len()).filter(|&l| l != reference).collect();
    let pairs: Vec<(&DiscreteDistribution, &ClusterAssignment)> =
        others.iter().map(|&l| (&clouds[l], &labels[l])).collect();
    let other_names: Vec<String> = others.iter().map(|&l| names[l].clone()).collect();
    let aligned = align_named(
        (&clouds[reference], &labels[reference]),
        &names[reference],
        &pairs,
        &other_names,
        seed,
    )?;
    let mut out = labels.to_vec();
    for (l, a) in others.into_iter().zip(aligned) {
        out[l] = a;
    }
    Ok(out)
}

/// Largest atom size not above `start` for which every domain holds enough
/// points of every class.
fn feasible_atom_size(domains: &[LabeledDistribution], start: usize, n_classes: usize) -> Result<usize> {
    let counts: Vec<Vec<usize>> = domains.iter().map(|d| d.class_counts()).collect();
    let mut n = start;
    while n >= n_classes {
        let quotas = atom_class_quotas(domains, n)?;
        if counts.iter().all(|c| c.iter().zip(&quotas).all(|(have, need)| have >= need)) {
            return Ok(n);
        }
        n -= 1;
    }
    Err(Error::InvalidArgument(
        "no atom size gives every class a point in every domain".into(),
    ))
}

fn dictionary_loss(dict: &Dictionary) -> f64 {
    let t = dict.loss_trace();
    if t.is_empty() {
        return 0.0;
    }
    let tail = (t.len() / 10).max(1);
    t[t.len() - tail..].iter().sum::<f64>() / tail as f64
}

fn check_sources(sources: &[DomainFeatures], cfg: &PipelineConfig) -> Result<(usize, usize)> {
    if sources.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least two source domains, got {}",
            sources.len()
        )));
    }
    let d = sources[0].dim();
    let mut seen = HashSet::new();
    for s in sources {
        if s.dim() != d {
            return Err(Error::DimensionMismatch {
                what: "feature dimension across domains",
                left: d,
                right: s.dim(),
            });
        }
        if !seen.insert(s.name.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate domain name {}", s.name)));
        }
        if s.len() < cfg.n_clusters {
            return Err(Error::InvalidArgument(format!(
                "domain {} has {} points, fewer than n_clusters = {}",
                s.name,
                s.len(),
                cfg.n_clusters
            )));
        }
    }
    let reference = match &cfg.reference_domain {
        None => 0,
        Some(name) => sources
            .iter()
            .position(|s| &s.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("reference domain {name} is not a source")))?,
    };
    Ok((d, reference))
}

/// Runs the full training loop on the source domains.
pub fn train(sources: &[DomainFeatures], cfg: &PipelineConfig) -> Result<ClusterModel> {
    cfg.validate()?;
    let (d, reference) = check_sources(sources, cfg)?;
    let k = cfg.n_clusters;
    let names: Vec<String> = sources.iter().map(|s| s.name.clone()).collect();
    let clouds: Vec<DiscreteDistribution> = sources.iter().map(|s| s.cloud()).collect::<Result<_>>()?;
    let settings = cfg.centroid_settings();

    let mut labels: Vec<ClusterAssignment> = sources
        .par_iter()
        .enumerate()
        .map(|(l, s)| pseudo_labels(s, k, cfg.kmeans_restarts, cfg.kmeans_max_iter, derive(cfg.seed, 100 + l as u64)))
        .collect::<Result<_>>()
        .map_err(|e| e.at_stage("pseudo-labels", 0))?;
    let mut refilled = 0;
    for (s, a) in sources.iter().zip(labels.iter_mut()) {
        // k-means never leaves a cluster empty; this only guards duplicates
        let means = cluster_means(s.features.view(), a);
        refilled += refill_empty(s.features.view(), means.view(), a)?;
    }
    labels = align_all(&clouds, &labels, &names, reference, derive(cfg.seed, 1))
        .map_err(|e| e.at_stage("alignment", 0))?;

    let mut dictionary: Option<Dictionary> = None;
    let mut centroids = Vec::new();
    let mut log = Vec::new();
    for round in 0..cfg.rounds {
        let labeled: Vec<LabeledDistribution> = sources
            .iter()
            .zip(&labels)
            .map(|(s, a)| LabeledDistribution::uniform(s.features.clone(), a.labels().to_vec(), k))
            .collect::<Result<_>>()?;
        let mut dcfg = cfg.dictionary.clone();
        dcfg.seed = derive(cfg.seed, 200 + round as u64);
        let init = match dictionary.take() {
            None => {
                let start = dcfg.n_atom.unwrap_or_else(|| default_atom_size(&labeled));
                dcfg.n_atom = Some(
                    feasible_atom_size(&labeled, start, k).map_err(|e| e.at_stage("atom initialisation", round))?,
                );
                DictionaryInit::FromDomains
            }
            Some(prev) => DictionaryInit::Warm(Box::new(prev)),
        };
        let dict = train_dictionary(&labeled, &dcfg, init).map_err(|e| e.at_stage("dictionary", round))?;

        centroids = sources
            .par_iter()
            .enumerate()
            .map(|(l, s)| {
                let alpha = dict.coords_row(l)?;
                centroids_with(&dict, &alpha, s, k, derive(cfg.seed, 300 + (round * names.len() + l) as u64), settings)
            })
            .collect::<Result<_>>()
            .map_err(|e| e.at_stage("centroids", round))?;

        let mut round_refilled = 0;
        let mut new_labels = Vec::with_capacity(sources.len());
        for (s, c) in sources.iter().zip(&centroids) {
            let mut a = assign_clusters(s.features.view(), c.view()).map_err(|e| e.at_stage("assignment", round))?;
            round_refilled += refill_empty(s.features.view(), c.view(), &mut a)?;
            new_labels.push(a);
        }
        new_labels[reference] = match_to_previous(&labels[reference], &new_labels[reference])
            .map_err(|e| e.at_stage("alignment", round))?;
        let new_labels = align_all(&clouds, &new_labels, &names, reference, derive(cfg.seed, 400 + round as u64))
            .map_err(|e| e.at_stage("alignment", round))?;

        let change: Vec<f64> = labels.iter().zip(&new_labels).map(|(a, b)| fraction_changed(a, b)).collect();
        log.push(RoundLog {
            round,
            dictionary_loss: dictionary_loss(&dict),
            label_change: change.clone(),
            empty_clusters_refilled: round_refilled + std::mem::take(&mut refilled),
        });
        labels = new_labels;
        dictionary = Some(dict);
        if change.iter().all(|&c| c < cfg.change_tol) {
            break;
        }
    }

    let model = ClusterModel {
        dictionary: dictionary.expect("at least one round"),
        reference_domain: names[reference].clone(),
        domain_names: names,
        centroids,
        assignments: labels,
        n_clusters: k,
        dim: d,
        config: cfg.clone(),
        log,
    };
    model.validate()?;
    Ok(model)
}

fn cluster_means(x: ArrayView2<f64>, a: &ClusterAssignment) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros((a.n_clusters(), x.ncols()));
    let sizes = a.sizes();
    for (row, &l) in x.outer_iter().zip(a.labels()) {
        sums.row_mut(l).scaled_add(1.0, &row);
    }
    for (mut r, &s) in sums.outer_iter_mut().zip(&sizes) {
        if s > 0 {
            r /= s as f64;
        }
    }
    sums
}

/// Clusters an unseen domain: regresses its barycentric coordinates on the
/// learned atoms, computes centroids and assigns every point.
pub fn infer(
    model: &ClusterModel,
    target: &DomainFeatures,
    seed: u64,
) -> Result<(ClusterAssignment, BarycentricWeights)> {
    if target.dim() != model.dim {
        return Err(Error::DimensionMismatch {
            what: "target vs model feature dimension",
            left: target.dim(),
            right: model.dim,
        });
    }
    if target.is_empty() {
        return Err(Error::InvalidArgument("target domain has no points".into()));
    }
    let mut rcfg = model.config.regression.clone();
    rcfg.seed = derive(seed, 500);
    let alpha = barycentric_regression(model.dictionary.atoms(), &target.cloud()?, &rcfg)?.alpha;
    let centroids = centroids_with(
        &model.dictionary,
        &alpha,
        target,
        model.n_clusters,
        derive(seed, 501),
        model.config.centroid_settings(),
    )?;
    let labels = assign_clusters(target.features.view(), centroids.view())?;
    Ok((labels, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn assign_examples() {
        let c = array![[0.0], [10.0]];
        let a = assign_clusters(array![[1.0], [9.0]].view(), c.view()).unwrap();
        assert_eq!(a.labels(), &[0, 1]);
        let a = assign_clusters(array![[1.0]].view(), array![[0.0], [2.0]].view()).unwrap();
        assert_eq!(a.labels(), &[0]);
        assert!(assign_clusters(array![[1.0]].view(), Array2::<f64>::zeros((0, 1)).view()).is_err());
        assert!(assign_clusters(array![[1.0, 2.0]].view(), c.view()).is_err());
    }

    #[test]
    fn refill_moves_cheapest_point() {
        let x = array![[0.0], [1.0], [2.0]];
        let c = array![[1.0], [5.0]];
        let mut a = ClusterAssignment::new(vec![0, 0, 0], 2).unwrap();
        assert_eq!(refill_empty(x.view(), c.view(), &mut a).unwrap(), 1);
        assert_eq!(a.labels(), &[0, 0, 1]);
    }

    #[test]
    fn previous_matching_undoes_renaming() {
        let old = ClusterAssignment::new(vec![0, 0, 1, 2, 2], 3).unwrap();
        let new = ClusterAssignment::new(vec![2, 2, 0, 1, 1], 3).unwrap();
        assert_eq!(match_to_previous(&old, &new).unwrap(), old);
    }

    #[test]
    fn sorted_rows_are_lexicographic() {
        let x = array![[1.0, 0.0], [0.0, 5.0], [0.0, -1.0]];
        assert_eq!(sort_rows(x.view()), array![[0.0, -1.0], [0.0, 5.0], [1.0, 0.0]]);
    }

    #[test]
    fn dataset_checks_label_length() {
        assert!(DomainDataset::new("a", array![[0.0], [1.0]], Some(vec![0])).is_err());
        assert!(DomainFeatures::new("a", array![[f64::NAN]]).is_err());
    }
}
