//! Open-set discovery: centroid z-scores, anomalous-cluster detection,
//! similarity-graph seed expansion, the triage queue and verdicts.

pub mod anomaly;
pub mod graph;
pub mod triage;

pub use anomaly::{
    detect_anomalous_clusters, layout_centroids, zscore_anomalies, AnomalyScore, DetectParams, Detection,
    FlaggedCluster,
};
pub use graph::{
    build_similarity_graph, expand_from_seeds, Candidate, Edge, ExpandParams, ExpansionResult, GraphParams,
    SimilarityGraph,
};
pub use triage::{
    assemble_triage_queue, cluster_item_id, read_audit_log, replay, sample_item_id, AuditEntry, Clock, FixedClock,
    ItemKind, Provenance, ProvenanceWeights, ReviewState, ReviewStates, SystemClock, TriageBook, TriageItem,
    TriageSources,
};
