//! Similarity analytics for civil-case causes of action (COAs).
//!
//! Two independent views of a COA are compared:
//!
//! - the statute articles its sampled cases cite ([`corpus`], [`vectors`],
//!   [`similarity`], [`ensemble`]), and
//! - how the plaintiffs' claim texts are distributed over density clusters
//!   in an embedding space ([`embedding`], [`claimspace`]).
//!
//! The cluster view selects a set of "similar" COA pairs, and the ensemble
//! ranks of those pairs fix a rank threshold. Pairs ranked within the
//! threshold become edges of a COA graph ([`graph`]) that can be exported
//! for Gephi. [`pipeline`] chains every step into resumable, file-backed
//! stages.

pub mod claimspace;
pub mod corpus;
pub mod embedding;
pub mod ensemble;
pub mod error;
pub mod graph;
pub mod pipeline;
pub mod similarity;
pub mod stats;
pub mod vectors;

pub use error::{Error, Result};
