//! Leave-one-domain-out comparison against k-means on the held-out domain.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::alignment::ClusterAssignment;
use crate::metrics::{adjusted_rand_index, clustering_accuracy, kmeans, KMeansConfig};
use crate::pipeline::{infer, train, DomainDataset, PipelineConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutScores {
    pub held_out: String,
    pub udadil_ari: f64,
    pub kmeans_ari: f64,
    pub udadil_accuracy: f64,
    pub kmeans_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<HoldoutScores>,
}

impl BenchmarkReport {
    /// Column means in the order ARI (ours, k-means), accuracy (ours, k-means).
    pub fn means(&self) -> [f64; 4] {
        let m = self.rows.len().max(1) as f64;
        let mut s = [0.0; 4];
        for r in &self.rows {
            s[0] += r.udadil_ari;
            s[1] += r.kmeans_ari;
            s[2] += r.udadil_accuracy;
            s[3] += r.kmeans_accuracy;
        }
        s.map(|v| v / m)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("held_out,udadil_ari,kmeans_ari,udadil_accuracy,kmeans_accuracy\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.held_out, r.udadil_ari, r.kmeans_ari, r.udadil_accuracy, r.kmeans_accuracy
            );
        }
        let m = self.means();
        let _ = writeln!(out, "mean,{},{},{},{}", m[0], m[1], m[2], m[3]);
        out
    }
}

/// Scores one held-out domain: trains on `sources`, infers on `target` and
/// runs k-means directly on the target features.
pub fn holdout(sources: &[&DomainDataset], target: &DomainDataset, cfg: &PipelineConfig) -> Result<HoldoutScores> {
    let truth = target
        .truth_labels
        .clone()
        .ok_or_else(|| Error::MissingLabels(target.name().to_string()))?;
    let truth = ClusterAssignment::from_labels(truth)?;
    let features: Vec<_> = sources.iter().map(|d| d.data.clone()).collect();
    let model = train(&features, cfg)?;
    let (labels, _) = infer(&model, &target.data, cfg.seed)?;
    let km_cfg = KMeansConfig {
        n_restarts: cfg.kmeans_restarts,
        max_iter: cfg.kmeans_max_iter,
        ..KMeansConfig::new(cfg.n_clusters, cfg.seed)
    };
    let km = kmeans(target.features().view(), &km_cfg)?.assignment;
    Ok(HoldoutScores {
        held_out: target.name().to_string(),
        udadil_ari: adjusted_rand_index(&labels, &truth)?,
        kmeans_ari: adjusted_rand_index(&km, &truth)?,
        udadil_accuracy: clustering_accuracy(&labels, &truth)?,
        kmeans_accuracy: clustering_accuracy(&km, &truth)?,
    })
}

/// Holds out each domain in turn and trains on all the others.
pub fn leave_one_out(domains: &[DomainDataset], cfg: &PipelineConfig) -> Result<BenchmarkReport> {
    if domains.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "benchmark needs at least three domains, got {}",
            domains.len()
        )));
    }
    let rows = (0..domains.len())
        .map(|t| {
            let sources: Vec<&DomainDataset> = domains.iter().enumerate().filter(|&(l, _)| l != t).map(|(_, d)| d).collect();
            holdout(&sources, &domains[t], cfg)
        })
        .collect::<Result<_>>()?;
    Ok(BenchmarkReport { rows })
}
