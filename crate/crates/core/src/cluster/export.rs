//! Per-sample projection/cluster rows for JSON-lines export.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::kmeans::{ClusterId, ClusterModel};
use super::refine::z_score;
use super::tsne::ProjectionResult;
use crate::embedding::{working_matrix, EmbeddingRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub sample_id: String,
    /// `None` for noise samples.
    pub cluster_id: Option<ClusterId>,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub centroid_distance: Option<f64>,
    pub z: Option<f64>,
}

/// One row per record; projection coordinates are matched by sample id.
pub fn projection_rows(
    records: &[EmbeddingRecord],
    model: &ClusterModel,
    projection: Option<&ProjectionResult>,
) -> Result<Vec<ProjectionRow>> {
    model.check_snapshot(records)?;
    let working = working_matrix(records, model.metric)?;
    let dist = model.centroid_distances(&working);
    let coords: std::collections::HashMap<&str, [f64; 2]> = projection
        .map(|p| p.sample_ids.iter().map(String::as_str).zip(p.coordinates.iter().copied()).collect())
        .unwrap_or_default();
    Ok(records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let c = coords.get(r.sample_id.as_str());
            let cluster = model.assignments[i];
            let z = cluster.zip(dist[i]).map(|(cid, d)| {
                let s = &model.clusters[&cid].stats;
                z_score(d, s.mean_distance, s.std_distance)
            });
            ProjectionRow {
                sample_id: r.sample_id.clone(),
                cluster_id: cluster,
                x: c.map(|c| c[0]),
                y: c.map(|c| c[1]),
                centroid_distance: dist[i],
                z,
            }
        })
        .collect())
}

pub fn write_rows<W: Write>(rows: &[ProjectionRow], mut out: W) -> Result<()> {
    let fail = |e: std::io::Error| Error::io("<output>", e);
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| fail(e.into()))?;
        out.write_all(b"\n").map_err(fail)?;
    }
    out.flush().map_err(fail)
}
