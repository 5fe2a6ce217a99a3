use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} ({left} vs {right})")]
    DimensionMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("weights are not on the probability simplex: {0}")]
    NotOnSimplex(String),

    #[error("exact transport solver did not converge after {iterations} pivots")]
    ExactSolverNotConverged { iterations: usize },

    #[error(
        "numerical underflow in Sinkhorn scaling (epsilon = {epsilon}); \
         use the log-domain stabilised solver"
    )]
    SinkhornUnderflow { epsilon: f64 },

    #[error("transport plan row {row} carries no mass; its barycentric image is undefined")]
    DegenerateRow { row: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain {domain}: class {class} has {available} points, atom quota needs {needed}")]
    InsufficientClassPoints {
        domain: usize,
        class: usize,
        available: usize,
        needed: usize,
    },

    #[error("domain {domain}: cluster {cluster} is empty")]
    EmptyCluster { domain: String, cluster: usize },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("{stage} failed in round {round}: {source}")]
    Stage {
        stage: &'static str,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing truth labels for domain {0}")]
    MissingLabels(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("unsupported archive format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn at_stage(self, stage: &'static str, round: usize) -> Self {
        Error::Stage {
            stage,
            round,
            source: Box::new(self),
        }
    }
}
