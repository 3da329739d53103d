//! Cluster analytics: labeled quality metrics, k-means with silhouette-based
//! k selection, 2-D t-SNE projection and refinement rounds.

pub mod export;
pub mod kmeans;
pub mod metrics;
pub mod refine;
pub mod tsne;

pub use export::{projection_rows, write_rows, ProjectionRow};
pub use kmeans::{
    kmeans, kmeans_with, select_k, select_k_with, Cluster, ClusterId, ClusterModel, ClusterStats, KMeansConfig,
    RefineOp, RefinementRecord, SelectKConfig, SelectKResult,
};
pub use metrics::{labeled_metrics, silhouette_mean, silhouette_samples, LabeledMetrics};
pub use refine::{quantile, refine_clusters, z_score};
pub use tsne::{pca, projection_records, tsne_project, tsne_project_with, ProjectionResult, TsneMethod, TsneParams};
