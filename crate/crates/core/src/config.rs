//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, unknown keys are errors and
//! missing keys keep their defaults. Optional settings accept `auto`.

use std::collections::BTreeMap;
use std::fmt::{Display, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::dictionary::{DictionaryConfig, RegressionConfig};
use crate::pipeline::PipelineConfig;
use crate::synth::SyntheticSpec;
use crate::{Error, Result};

/// Parsed `key = value` lines, consumed key by key.
#[derive(Debug)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                location: format!("line {}", i + 1),
                message: format!("expected `key = value`, found {line:?}"),
            })?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::Parse {
                    location: format!("line {}", i + 1),
                    message: format!("duplicate key {key}"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::Parse {
                location: format!("line {line}"),
                message: format!("invalid value {v:?} for {key}"),
            }),
        }
    }

    /// Like [`take`](Self::take) for settings where `auto` means `None`.
    pub fn take_auto<T: FromStr>(&mut self, key: &str) -> Result<Option<Option<T>>> {
        match self.entries.get(key) {
            Some((_, v)) if v == "auto" => {
                self.entries.remove(key);
                Ok(Some(None))
            }
            _ => Ok(self.take(key)?.map(Some)),
        }
    }

    /// Errors on any key that was never taken.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(Error::Parse {
                location: format!("line {line}"),
                message: format!("unknown key {key}"),
            }),
        }
    }
}

fn put(out: &mut String, key: &str, v: impl Display) {
    let _ = writeln!(out, "{key} = {v}");
}

fn put_auto<T: Display>(out: &mut String, key: &str, v: &Option<T>) {
    match v {
        Some(v) => put(out, key, v),
        None => put(out, key, "auto"),
    }
}

macro_rules! set {
    ($kv:ident, $target:expr, $key:literal) => {
        if let Some(v) = $kv.take($key)? {
            $target = v;
        }
    };
}

macro_rules! set_auto {
    ($kv:ident, $target:expr, $key:literal) => {
        if let Some(v) = $kv.take_auto($key)? {
            $target = v;
        }
    };
}

/// Every setting of a training and inference run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_clusters: usize,
    pub rounds: usize,
    pub seed: u64,
    pub change_tol: f64,
    pub reference_domain: Option<String>,
    pub n_atom: Option<usize>,
    pub shift: f64,
    pub lr: f64,
    pub batch_size: Option<usize>,
    pub n_iter: usize,
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub inner_steps: usize,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    pub regression_lr: f64,
    pub regression_iter: usize,
    pub regression_batch_size: Option<usize>,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub barycenter_tol: f64,
    pub barycenter_max_iter: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::new(2, 0);
        let dict = DictionaryConfig::default();
        let reg = RegressionConfig::default();
        Self {
            n_clusters: p.n_clusters,
            rounds: p.rounds,
            seed: p.seed,
            change_tol: p.change_tol,
            reference_domain: None,
            n_atom: dict.n_atom,
            shift: dict.shift,
            lr: dict.lr,
            batch_size: dict.batch_size,
            n_iter: dict.n_iter,
            epsilon: dict.epsilon,
            beta: dict.beta,
            inner_steps: dict.inner_steps,
            sinkhorn_tol: dict.sinkhorn_tol,
            sinkhorn_max_iter: dict.sinkhorn_max_iter,
            regression_lr: reg.lr,
            regression_iter: reg.n_iter,
            regression_batch_size: reg.batch_size,
            kmeans_restarts: p.kmeans_restarts,
            kmeans_max_iter: p.kmeans_max_iter,
            barycenter_tol: p.barycenter_tol,
            barycenter_max_iter: p.barycenter_max_iter,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_clusters", self.n_clusters),
            ("rounds", self.rounds),
            ("inner_steps", self.inner_steps),
            ("sinkhorn_max_iter", self.sinkhorn_max_iter),
            ("kmeans_restarts", self.kmeans_restarts),
            ("kmeans_max_iter", self.kmeans_max_iter),
            ("barycenter_max_iter", self.barycenter_max_iter),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{k} must be at least 1")));
            }
        }
        for (k, v) in [("n_atom", self.n_atom), ("batch_size", self.batch_size), ("regression_batch_size", self.regression_batch_size)] {
            if v == Some(0) {
                return Err(Error::InvalidArgument(format!("{k} must be at least 1")));
            }
        }
        let positive = [
            ("lr", Some(self.lr)),
            ("regression_lr", Some(self.regression_lr)),
            ("sinkhorn_tol", Some(self.sinkhorn_tol)),
            ("barycenter_tol", Some(self.barycenter_tol)),
            ("change_tol", Some(self.change_tol)),
            ("epsilon", self.epsilon),
            ("beta", self.beta),
        ];
        for (k, v) in positive {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::InvalidArgument(format!("{k} must be positive and finite, got {v}")));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.shift) {
            return Err(Error::InvalidArgument(format!("shift must lie in [0, 1], got {}", self.shift)));
        }
        if let Some(r) = &self.reference_domain {
            if r.is_empty() || r.trim() != r || r.contains('#') {
                return Err(Error::InvalidArgument(format!("reference_domain {r:?} cannot be stored")));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let mut c = Self::default();
        set!(kv, c.n_clusters, "n_clusters");
        set!(kv, c.rounds, "rounds");
        set!(kv, c.seed, "seed");
        set!(kv, c.change_tol, "change_tol");
        set_auto!(kv, c.reference_domain, "reference_domain");
        set_auto!(kv, c.n_atom, "n_atom");
        set!(kv, c.shift, "shift");
        set!(kv, c.lr, "lr");
        set_auto!(kv, c.batch_size, "batch_size");
        set!(kv, c.n_iter, "n_iter");
        set_auto!(kv, c.epsilon, "epsilon");
        set_auto!(kv, c.beta, "beta");
        set!(kv, c.inner_steps, "inner_steps");
        set!(kv, c.sinkhorn_tol, "sinkhorn_tol");
        set!(kv, c.sinkhorn_max_iter, "sinkhorn_max_iter");
        set!(kv, c.regression_lr, "regression_lr");
        set!(kv, c.regression_iter, "regression_iter");
        set_auto!(kv, c.regression_batch_size, "regression_batch_size");
        set!(kv, c.kmeans_restarts, "kmeans_restarts");
        set!(kv, c.kmeans_max_iter, "kmeans_max_iter");
        set!(kv, c.barycenter_tol, "barycenter_tol");
        set!(kv, c.barycenter_max_iter, "barycenter_max_iter");
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        put(&mut out, "n_clusters", self.n_clusters);
        put(&mut out, "rounds", self.rounds);
        put(&mut out, "seed", self.seed);
        put(&mut out, "change_tol", self.change_tol);
        put_auto(&mut out, "reference_domain", &self.reference_domain);
        put_auto(&mut out, "n_atom", &self.n_atom);
        put(&mut out, "shift", self.shift);
        put(&mut out, "lr", self.lr);
        put_auto(&mut out, "batch_size", &self.batch_size);
        put(&mut out, "n_iter", self.n_iter);
        put_auto(&mut out, "epsilon", &self.epsilon);
        put_auto(&mut out, "beta", &self.beta);
        put(&mut out, "inner_steps", self.inner_steps);
        put(&mut out, "sinkhorn_tol", self.sinkhorn_tol);
        put(&mut out, "sinkhorn_max_iter", self.sinkhorn_max_iter);
        put(&mut out, "regression_lr", self.regression_lr);
        put(&mut out, "regression_iter", self.regression_iter);
        put_auto(&mut out, "regression_batch_size", &self.regression_batch_size);
        put(&mut out, "kmeans_restarts", self.kmeans_restarts);
        put(&mut out, "kmeans_max_iter", self.kmeans_max_iter);
        put(&mut out, "barycenter_tol", self.barycenter_tol);
        put(&mut out, "barycenter_max_iter", self.barycenter_max_iter);
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            n_clusters: self.n_clusters,
            rounds: self.rounds,
            change_tol: self.change_tol,
            reference_domain: self.reference_domain.clone(),
            dictionary: DictionaryConfig {
                n_atom: self.n_atom,
                shift: self.shift,
                lr: self.lr,
                batch_size: self.batch_size,
                n_iter: self.n_iter,
                epsilon: self.epsilon,
                beta: self.beta,
                inner_steps: self.inner_steps,
                learn_coords: true,
                sinkhorn_tol: self.sinkhorn_tol,
                sinkhorn_max_iter: self.sinkhorn_max_iter,
                seed: self.seed,
            },
            regression: RegressionConfig {
                lr: self.regression_lr,
                n_iter: self.regression_iter,
                epsilon: None,
                batch_size: self.regression_batch_size,
                inner_steps: self.inner_steps,
                seed: self.seed,
            },
            kmeans_restarts: self.kmeans_restarts,
            kmeans_max_iter: self.kmeans_max_iter,
            barycenter_tol: self.barycenter_tol,
            barycenter_max_iter: self.barycenter_max_iter,
            seed: self.seed,
        }
    }
}

impl SyntheticSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let mut s = Self::default();
        set!(kv, s.n_domains, "n_domains");
        set!(kv, s.n_clusters, "n_clusters");
        set!(kv, s.d, "d");
        set!(kv, s.points_per_cluster, "points_per_cluster");
        set!(kv, s.cluster_separation, "cluster_separation");
        set!(kv, s.translation_scale, "translation_scale");
        set!(kv, s.rotation_scale, "rotation_scale");
        set!(kv, s.noise_sigma, "noise_sigma");
        set!(kv, s.seed, "seed");
        kv.finish()?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        put(&mut out, "n_domains", self.n_domains);
        put(&mut out, "n_clusters", self.n_clusters);
        put(&mut out, "d", self.d);
        put(&mut out, "points_per_cluster", self.points_per_cluster);
        put(&mut out, "cluster_separation", self.cluster_separation);
        put(&mut out, "translation_scale", self.translation_scale);
        put(&mut out, "rotation_scale", self.rotation_scale);
        put(&mut out, "noise_sigma", self.noise_sigma);
        put(&mut out, "seed", self.seed);
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn custom_round_trip() {
        let c = RunConfig {
            n_clusters: 7,
            seed: u64::MAX,
            reference_domain: Some("amazon".into()),
            epsilon: Some(0.1 + 0.2),
            beta: Some(1e-300),
            batch_size: Some(33),
            lr: 1.0 / 3.0,
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_defaults() {
        let c = RunConfig::parse("# run\n n_clusters = 5 # five\n\nepsilon = auto\n").unwrap();
        assert_eq!(c.n_clusters, 5);
        assert_eq!(c.epsilon, None);
        assert_eq!(c.rounds, RunConfig::default().rounds);
    }

    #[test]
    fn bad_input_rejected() {
        for text in ["bogus = 1", "n_clusters = x", "n_clusters 3", "n_clusters = 0", "lr = -1", "a = 1\na = 2"] {
            assert!(RunConfig::parse(text).is_err(), "{text}");
        }
        let e = RunConfig::parse("rounds = 2\nlr = nope").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
    }

    #[test]
    fn spec_round_trip() {
        let s = SyntheticSpec {
            noise_sigma: 0.8,
            seed: 9,
            ..SyntheticSpec::default()
        };
        assert_eq!(SyntheticSpec::parse(&s.to_text()).unwrap(), s);
    }
}
