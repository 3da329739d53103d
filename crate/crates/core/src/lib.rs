//! Embedding-space engine for open-set identity-document fraud discovery.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`embedding`]: vector primitives (normalization, distances, centroids).
//! - [`metric_learning`]: composite ArcFace / SupCon / Center objective with
//!   analytic gradients, the projection head, trainer and layout classifier.
//! - [`cluster`]: clustering-quality metrics, k-means, t-SNE and refinement.
//! - [`discovery`]: centroid z-scores, anomalous-cluster detection,
//!   similarity-graph seed expansion and the triage queue.
//! - [`datastore`]: datasets, file formats, snapshots and synthetic fixtures.

pub mod cluster;
pub mod datastore;
pub mod discovery;
pub mod embedding;
pub mod error;
pub mod job;
pub mod metric_learning;

pub use embedding::{DistanceMetric, EmbeddingRecord, SplitTag};
pub use error::{Error, ErrorKind, Result};
pub use job::JobControl;
