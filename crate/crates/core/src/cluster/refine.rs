//! Investigator-driven refinement rounds over a [`ClusterModel`]: split,
//! merge, outlier removal and percentile trimming. Every call returns a new
//! model version and appends to its operation log.

use ndarray::{Array2, Axis};

use super::kmeans::{compact, kmeans, ClusterId, ClusterModel, KMeansConfig, RefineOp, RefinementRecord};
use super::metrics::silhouette_of_rows;
use crate::embedding::{working_matrix, EmbeddingRecord};
use crate::error::{Error, Result};

/// Linear-interpolation quantile (Hyndman-Fan type 7) of ascending `sorted`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Centroid-distance z-score; zero when the cluster has no spread.
pub fn z_score(distance: f64, mean: f64, std: f64) -> f64 {
    if std > 0.0 {
        (distance - mean) / std
    } else {
        0.0
    }
}

pub fn refine_clusters(model: &ClusterModel, records: &[EmbeddingRecord], ops: &[RefineOp]) -> Result<ClusterModel> {
    model.check_snapshot(records)?;
    let working = working_matrix(records, model.metric)?;
    let mut next = model.clone();
    for op in ops {
        let record = apply(&mut next, records, &working, op)?;
        next.version += 1;
        next.recompute(&working);
        next.log.push(RefinementRecord {
            version: next.version,
            ..record
        });
    }
    Ok(next)
}

fn require(model: &ClusterModel, id: ClusterId) -> Result<()> {
    if model.clusters.contains_key(&id) {
        Ok(())
    } else {
        Err(Error::UnknownCluster(id))
    }
}

fn targets(model: &ClusterModel, cluster: Option<ClusterId>) -> Result<Vec<ClusterId>> {
    match cluster {
        Some(id) => {
            require(model, id)?;
            Ok(vec![id])
        }
        None => Ok(model.clusters.keys().copied().collect()),
    }
}

fn record(op: &RefineOp, applied: bool, moved: usize, note: impl Into<String>) -> RefinementRecord {
    RefinementRecord {
        version: 0,
        op: op.clone(),
        applied,
        moved_to_noise: moved,
        note: note.into(),
    }
}

/// Mean silhouette of `rows` under `assignments`, ignoring noise samples.
fn affected_silhouette(working: &Array2<f64>, assignments: &[Option<ClusterId>], rows: &[usize], model: &ClusterModel) -> f64 {
    let assigned: Vec<usize> = (0..assignments.len()).filter(|&i| assignments[i].is_some()).collect();
    let mut position = vec![usize::MAX; assignments.len()];
    for (p, &i) in assigned.iter().enumerate() {
        position[i] = p;
    }
    let labels = compact(&assigned.iter().map(|&i| assignments[i].expect("assigned")).collect::<Vec<_>>());
    let sub = working.select(Axis(0), &assigned);
    let local: Vec<usize> = rows.iter().map(|&i| position[i]).collect();
    let s = silhouette_of_rows(&sub, &labels, model.metric, &local);
    s.iter().sum::<f64>() / s.len().max(1) as f64
}

fn apply(model: &mut ClusterModel, records: &[EmbeddingRecord], working: &Array2<f64>, op: &RefineOp) -> Result<RefinementRecord> {
    match *op {
        RefineOp::Split { cluster } => {
            require(model, cluster)?;
            let members = model.members(cluster);
            if members.len() < 2 {
                return Ok(record(op, false, 0, "cluster has fewer than two members"));
            }
            let subset: Vec<EmbeddingRecord> = members.iter().map(|&i| records[i].clone()).collect();
            let cfg = KMeansConfig {
                metric: model.metric,
                ..KMeansConfig::new(2, model.version as u64)
            };
            let halves = kmeans(&subset, &cfg)?;
            let new_id = model.clusters.keys().max().map_or(0, |m| m + 1);
            let mut proposal = model.assignments.clone();
            for (local, &i) in members.iter().enumerate() {
                if halves.assignments[local] == Some(1) {
                    proposal[i] = Some(new_id);
                }
            }
            let before = affected_silhouette(working, &model.assignments, &members, model);
            let after = affected_silhouette(working, &proposal, &members, model);
            if after > before {
                model.assignments = proposal;
                Ok(record(
                    op,
                    true,
                    0,
                    format!("split into {cluster} and {new_id}; silhouette {before:.4} -> {after:.4}"),
                ))
            } else {
                Ok(record(
                    op,
                    false,
                    0,
                    format!("kept; split silhouette {after:.4} does not improve on {before:.4}"),
                ))
            }
        }
        RefineOp::Merge { a, b } => {
            require(model, a)?;
            require(model, b)?;
            if a == b {
                return Err(Error::InvalidArgument(format!("cannot merge cluster {a} with itself")));
            }
            for slot in model.assignments.iter_mut() {
                if *slot == Some(b) {
                    *slot = Some(a);
                }
            }
            Ok(record(op, true, 0, format!("merged {b} into {a}")))
        }
        RefineOp::RemoveOutliers { z_max, cluster } => {
            if !z_max.is_finite() {
                return Err(Error::InvalidArgument("z_max must be finite".into()));
            }
            let ids = targets(model, cluster)?;
            let dist = model.centroid_distances(working);
            let mut moved = 0;
            for id in ids {
                let stats = model.clusters[&id].stats.clone();
                for i in model.members(id) {
                    let d = dist[i].expect("member has a distance");
                    if z_score(d, stats.mean_distance, stats.std_distance) > z_max {
                        model.assignments[i] = None;
                        moved += 1;
                    }
                }
            }
            Ok(record(op, true, moved, format!("{moved} samples above z = {z_max}")))
        }
        RefineOp::Trim { percentile, cluster } => {
            if !(percentile > 0.0 && percentile <= 100.0) {
                return Err(Error::InvalidPercentile(percentile));
            }
            let ids = targets(model, cluster)?;
            let dist = model.centroid_distances(working);
            let mut moved = 0;
            for id in ids {
                let members = model.members(id);
                let mut sorted: Vec<f64> = members.iter().map(|&i| dist[i].expect("member")).collect();
                sorted.sort_by(f64::total_cmp);
                let cut = quantile(&sorted, percentile / 100.0);
                for i in members {
                    if dist[i].expect("member") > cut {
                        model.assignments[i] = None;
                        moved += 1;
                    }
                }
            }
            Ok(record(op, true, moved, format!("{moved} samples beyond percentile {percentile}")))
        }
    }
}
