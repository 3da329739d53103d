//! Response shapes built from core types.

use std::collections::BTreeMap;

use layoutspace_core::cluster::{projection_rows, ClusterId, ClusterModel, ProjectionRow, RefinementRecord};
use layoutspace_core::datastore::Dataset;
use layoutspace_core::{DistanceMetric, EmbeddingRecord};
use serde::Serialize;

use crate::state::snapshot_hex;

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub dataset_id: String,
    pub dimension: usize,
    pub samples: usize,
    pub labeled: usize,
    pub layouts: BTreeMap<String, usize>,
    pub snapshot_version: u64,
    pub fingerprint: String,
    pub provenance: String,
    pub model_versions: Vec<u32>,
}

pub fn dataset_summary(ds: &Dataset, model_versions: Vec<u32>) -> DatasetSummary {
    let mut layouts = BTreeMap::new();
    for r in ds.records() {
        if let Some(l) = &r.layout_label {
            *layouts.entry(l.clone()).or_insert(0) += 1;
        }
    }
    DatasetSummary {
        dataset_id: ds.dataset_id.clone(),
        dimension: ds.dimension,
        samples: ds.len(),
        labeled: layouts.values().sum(),
        layouts,
        snapshot_version: ds.snapshot_version,
        fingerprint: snapshot_hex(ds.records()),
        provenance: ds.provenance.clone(),
        model_versions,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterView {
    pub cluster_id: ClusterId,
    pub size: usize,
    pub mean_distance: f64,
    pub std_distance: f64,
    /// Member closest to the centroid.
    pub medoid: Option<String>,
    /// Members with the largest z, highest first.
    pub representatives: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub version: u32,
    pub metric: DistanceMetric,
    pub snapshot: String,
    pub k: usize,
    pub inertia: f64,
    pub iterations: usize,
    pub noise: usize,
    pub stale: bool,
    pub clusters: Vec<ClusterView>,
    pub log: Vec<RefinementRecord>,
}

const REPRESENTATIVES: usize = 5;

pub fn model_summary(model: &ClusterModel, records: &[EmbeddingRecord]) -> ModelSummary {
    let rows = projection_rows(records, model, None).ok();
    let mut by_cluster: BTreeMap<ClusterId, Vec<&ProjectionRow>> = BTreeMap::new();
    for r in rows.iter().flatten() {
        if let Some(c) = r.cluster_id {
            by_cluster.entry(c).or_default().push(r);
        }
    }
    let clusters = model
        .clusters
        .values()
        .map(|c| {
            let members = by_cluster.get(&c.id).map(Vec::as_slice).unwrap_or_default();
            let medoid = members
                .iter()
                .filter_map(|r| r.centroid_distance.map(|d| (d, &r.sample_id)))
                .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
                .map(|(_, id)| id.clone());
            let mut by_z: Vec<&&ProjectionRow> = members.iter().collect();
            by_z.sort_by(|a, b| {
                b.z.unwrap_or(f64::NEG_INFINITY)
                    .total_cmp(&a.z.unwrap_or(f64::NEG_INFINITY))
                    .then_with(|| a.sample_id.cmp(&b.sample_id))
            });
            ClusterView {
                cluster_id: c.id,
                size: c.stats.size,
                mean_distance: c.stats.mean_distance,
                std_distance: c.stats.std_distance,
                medoid,
                representatives: by_z.iter().take(REPRESENTATIVES).map(|r| r.sample_id.clone()).collect(),
            }
        })
        .collect();
    ModelSummary {
        version: model.version,
        metric: model.metric,
        snapshot: format!("{:016x}", model.snapshot),
        k: model.k(),
        inertia: model.inertia,
        iterations: model.iterations,
        noise: model.noise().len(),
        stale: rows.is_none(),
        clusters,
        log: model.log.clone(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Page<T> {
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub items: Vec<T>,
}

pub fn page<T: Clone>(all: &[T], offset: usize, limit: usize) -> Page<T> {
    let start = offset.min(all.len());
    let end = start.saturating_add(limit).min(all.len());
    Page {
        total: all.len(),
        offset,
        limit,
        items: all[start..end].to_vec(),
    }
}
