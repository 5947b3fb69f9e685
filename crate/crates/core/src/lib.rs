//! Cluster-based data augmentation for sparsely labeled text corpora.
//!
//! Labeled and unlabeled documents are embedded together, clustered with
//! k-means, and unlabeled documents close to a centroid inherit a synthetic
//! label decided by the share of positives among the labeled documents in the
//! same neighborhood. Binary classifiers trained on the original and the
//! augmented data are then compared by paired bootstrap.
//!
//! Modules follow the pipeline order:
//!
//! - [`corpus`]: documents, tri-state labels, cleaning, splits, upsampling
//! - [`embedding`]: TF-IDF (with optional random projection) and PV-DBOW
//! - [`clustering`]: seeded k-means++ / Lloyd
//! - [`propagation`]: radius neighborhoods and threshold propagation
//! - [`tuning`]: masked-validation grid search
//! - [`classifier`]: feedforward network, Adam, bootstrap and Welch's t-test
//! - [`synthgen`]: planted-topic synthetic corpora
//! - [`pipeline`]: configuration, run manifest and end-to-end orchestration

pub mod artifact;
pub mod classifier;
pub mod cli;
pub mod clustering;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod pipeline;
pub mod propagation;
pub mod seed;
pub mod synthgen;
pub mod tuning;

pub use error::{Error, Result};
