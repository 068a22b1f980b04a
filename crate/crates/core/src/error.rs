use thiserror::Error;

use crate::tree::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node {0} not found")]
    NodeNotFound(NodeId),
    #[error("no label {0:?}")]
    UnknownLabel(String),
    #[error("metric has no value for link into node {0}")]
    MetricIncomplete(NodeId),
    #[error("need at least 2 leaves, got {0}")]
    TooFewLeaves(usize),
    #[error("label sets differ: {0}")]
    LabelMismatch(String),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("expected a {expected} tree")]
    WrongOrientation { expected: &'static str },
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("success rate {0} outside (0, 1)")]
    InvalidRate(f64),
    #[error("link length {0} is not positive and finite")]
    InvalidLength(f64),
    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),
    #[error("transition matrix is singular")]
    SingularTransition,
    #[error("transition matrix has |det| = 1 (permutation-like)")]
    PermutationLike,
    #[error("fusion coefficients must sum to 1, got {0}")]
    InvalidCoefficients(f64),
    #[error("invalid distance matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid sample set: {0}")]
    InvalidSamples(String),
    #[error("zero count for pair ({0}, {1})")]
    ZeroCount(String, String),
    #[error("inferred topology does not match the true topology")]
    TopologyMismatch,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("trial {index}: {source}")]
    Trial {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
