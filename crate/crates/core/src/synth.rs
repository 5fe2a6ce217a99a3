//! Synthetic multi-domain clustering benchmarks.
//!
//! Cluster means are shared by all domains; every domain draws its own
//! Gaussian noise and then applies its own rigid motion to all of its points.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::pipeline::DomainDataset;
use crate::rng::{derive, seeded, Rng};
use crate::{Error, Result};

pub const MAX_MEAN_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_domains: usize,
    pub n_clusters: usize,
    pub d: usize,
    pub points_per_cluster: usize,
    /// Minimum distance between cluster means, which are drawn from a
    /// standard normal in `d` dimensions.
    pub cluster_separation: f64,
    /// Upper bound on the norm of each domain's translation.
    pub translation_scale: f64,
    /// Upper bound, in radians, on each domain's rotation angles.
    pub rotation_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_domains: 3,
            n_clusters: 4,
            d: 10,
            points_per_cluster: 50,
            cluster_separation: 3.0,
            translation_scale: 3.0,
            rotation_scale: 0.5,
            noise_sigma: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_domains == 0 || self.n_clusters == 0 || self.d == 0 {
            return Err(Error::InvalidArgument("n_domains, n_clusters and d must be at least 1".into()));
        }
        if self.points_per_cluster < 2 {
            return Err(Error::InvalidArgument("points_per_cluster must be at least 2".into()));
        }
        if !(self.cluster_separation > 0.0) || !self.cluster_separation.is_finite() {
            return Err(Error::InvalidArgument("cluster_separation must be positive".into()));
        }
        for (name, v) in [
            ("translation_scale", self.translation_scale),
            ("rotation_scale", self.rotation_scale),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

fn normal_vec(d: usize, rng: &mut Rng) -> Array1<f64> {
    Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal))
}

fn cluster_means(spec: &SyntheticSpec, rng: &mut Rng) -> Result<Array2<f64>> {
    let mut means: Vec<Array1<f64>> = Vec::with_capacity(spec.n_clusters);
    let min_sq = spec.cluster_separation * spec.cluster_separation;
    let mut attempts = 0;
    while means.len() < spec.n_clusters {
        if attempts == MAX_MEAN_ATTEMPTS {
            return Err(Error::InvalidArgument(format!(
                "could not place {} cluster means at distance >= {} after {MAX_MEAN_ATTEMPTS} attempts; \
                 lower cluster_separation or raise d",
                spec.n_clusters, spec.cluster_separation
            )));
        }
        attempts += 1;
        let m = normal_vec(spec.d, rng);
        if means.iter().all(|o| (o - &m).mapv(|x| x * x).sum() >= min_sq) {
            means.push(m);
        }
    }
    let mut out = Array2::zeros((spec.n_clusters, spec.d));
    for (mut row, m) in out.outer_iter_mut().zip(means) {
        row.assign(&m);
    }
    Ok(out)
}

/// Random orthonormal basis by Gram-Schmidt on Gaussian vectors.
fn random_basis(d: usize, rng: &mut Rng) -> Vec<Array1<f64>> {
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v = normal_vec(d, rng);
        for b in &basis {
            let p = v.dot(b);
            v.scaled_add(-p, b);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    basis
}

/// Rotation acting in `floor(d / 2)` orthogonal random planes, each by an
/// angle drawn uniformly from `[-max_angle, max_angle]`.
fn random_rotation(d: usize, max_angle: f64, rng: &mut Rng) -> Array2<f64> {
    let mut r = Array2::eye(d);
    if max_angle == 0.0 || d < 2 {
        return r;
    }
    let basis = random_basis(d, rng);
    for pair in basis.chunks_exact(2) {
        let theta = rng.random_range(-max_angle..=max_angle);
        let (u, v) = (&pair[0], &pair[1]);
        let uu = outer(u, u);
        let vv = outer(v, v);
        let vu = outer(v, u);
        let uv = outer(u, v);
        r = r + (&uu + &vv) * (theta.cos() - 1.0) + (&vu - &uv) * theta.sin();
    }
    r
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

fn random_translation(d: usize, max_norm: f64, rng: &mut Rng) -> Array1<f64> {
    if max_norm == 0.0 {
        return Array1::zeros(d);
    }
    let dir = normal_vec(d, rng);
    let norm = dir.dot(&dir).sqrt().max(f64::MIN_POSITIVE);
    dir * (rng.random_range(0.0..=max_norm) / norm)
}

/// Generates `spec.n_domains` labeled domains named `domain0`, `domain1`, ...
/// Points are stored cluster by cluster.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<Vec<DomainDataset>> {
    spec.validate()?;
    let means = cluster_means(spec, &mut seeded(derive(spec.seed, 0)))?;
    let n = spec.n_clusters * spec.points_per_cluster;
    (0..spec.n_domains)
        .map(|l| {
            let mut rng = seeded(derive(spec.seed, 1 + l as u64));
            let mut x = Array2::zeros((n, spec.d));
            let mut labels = Vec::with_capacity(n);
            for c in 0..spec.n_clusters {
                for i in 0..spec.points_per_cluster {
                    let p = &means.row(c) + &(normal_vec(spec.d, &mut rng) * spec.noise_sigma);
                    x.row_mut(c * spec.points_per_cluster + i).assign(&p);
                    labels.push(c);
                }
            }
            let rot = random_rotation(spec.d, spec.rotation_scale, &mut rng);
            let t = random_translation(spec.d, spec.translation_scale, &mut rng);
            let moved = x.dot(&rot.t()) + &t.insert_axis(ndarray::Axis(0));
            DomainDataset::new(format!("domain{l}"), moved, Some(labels))
        })
        .collect()
}
