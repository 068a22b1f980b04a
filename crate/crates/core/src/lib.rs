//! Routing-tree tomography from end-to-end loss measurements.
//!
//! The crate covers the whole pipeline: a logical routing tree with an
//! additive link metric ([`tree`]), the loss and log-det metrics ([`metrics`]),
//! a multicast / reverse-multicast probe simulator ([`sim`]), distance
//! estimation from probe outcomes ([`estimate`]), distance-based tree
//! reconstruction with neighbor-joining and rooted neighbor-joining
//! ([`infer`]), and a Monte-Carlo experiment harness ([`harness`]).

pub mod error;
pub mod estimate;
pub mod harness;
pub mod infer;
pub mod metrics;
pub mod newick;
pub mod rng;
pub mod sim;
pub mod tree;

mod fmt;

pub use error::{Error, Result};
pub use estimate::{empirical_distance_matrix, EstimatorConfig, ZeroCountPolicy};
pub use infer::{nj_binary, nj_general, rnj_binary, rnj_general, InferenceConfig, InferredTree};
pub use metrics::DistanceMatrix;
pub use sim::{simulate_multicast, simulate_reverse_multicast, SampleSet};
pub use tree::{LinkMetric, NodeId, Orientation, RoutedTree, TreeBuilder, TreeKind};
