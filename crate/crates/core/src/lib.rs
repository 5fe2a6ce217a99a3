//! Unsupervised clustering of several domain-shifted datasets.
//!
//! Each domain is represented as a Wasserstein barycenter of a small set of
//! learned, labeled point clouds ("atoms"). Cluster indices are matched
//! across domains with an assignment problem over Wasserstein costs, and an
//! unseen domain is clustered by regressing its barycentric coordinates on
//! the learned atoms.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`ot`] | cost matrices, exact and entropic transport plans, barycentric maps |
//! | [`barycenter`] | free-support barycenters, unlabeled and label-aware |
//! | [`dictionary`] | atom initialisation, dictionary training, barycentric regression |
//! | [`alignment`] | cluster cost matrices and the assignment problem |
//! | [`pipeline`] | training over source domains and inference on a target |
//! | [`metrics`] | k-means baseline, ARI, matched accuracy, evaluation reports |
//! | [`benchmark`] | leave-one-domain-out comparison with k-means |
//! | [`io`], [`synth`], [`config`] | file formats, synthetic benchmarks, run configuration |

pub mod alignment;
pub mod barycenter;
pub mod benchmark;
pub mod config;
pub mod dictionary;
mod error;
pub mod io;
pub mod metrics;
pub mod ot;
pub mod pipeline;
pub(crate) mod rng;
pub mod synth;

pub use error::{Error, Result};
