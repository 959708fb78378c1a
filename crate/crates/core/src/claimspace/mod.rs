//! Clustering of claim embeddings and the parameter search built on it.
//!
//! Cases whose claims embed close together are taken as evidence that their
//! COAs describe similar disputes. [`cluster`] partitions the embeddings,
//! [`relation`] turns a partition into a set of similar COA pairs and scores
//! it, [`search`] tunes the two knobs (ε, λ) and [`threshold`] converts the
//! winning relation into a rank cutoff for the ensemble list.

pub mod cluster;
pub mod relation;
pub mod search;
pub mod threshold;

pub use cluster::{epsilon_cluster, ClusterAssignment, ClusterIndex, Metric};
pub use relation::{
    similarity_relation, utility, CoLocation, PairEvidence, SimilarityRelation, UtilityResult,
};
pub use search::{
    anneal, optimize, AnnealOutcome, AnnealSettings, LambdaGrid, Optimization, SearchParams,
    TraceRow,
};
pub use threshold::{
    determine_threshold, threshold_from_ranks, ManualExclusions, OutlierRule, RankedPair,
    ThresholdReport,
};
