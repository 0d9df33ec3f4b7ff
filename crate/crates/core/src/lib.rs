//! Household load-profile segmentation: ingestion, feature extraction,
//! clustering with validity-driven model selection, cross-algorithm
//! consensus, a tree-ensemble classifier that mimics the clustering, and a
//! refinement loop for unstable or low-confidence points.

pub mod classifier;
pub mod cluster;
pub mod consensus;
pub mod distance;
pub mod features;
pub mod ingest;
pub mod pipeline;
pub mod refine;
pub mod synth;
pub mod validity;
