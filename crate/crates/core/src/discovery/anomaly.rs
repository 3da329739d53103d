//! Centroid z-score ranking and detection of clusters that sit far from every
//! known layout.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster::kmeans::{ClusterId, ClusterModel};
use crate::cluster::refine::{quantile, z_score};
use crate::embedding::{working_matrix, DistanceMetric, EmbeddingRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub sample_id: String,
    pub z: f64,
    pub cluster_id: ClusterId,
    pub centroid_distance: f64,
}

/// One score per non-noise sample, by descending z (ties by sample id).
pub fn zscore_anomalies(model: &ClusterModel, records: &[EmbeddingRecord]) -> Result<Vec<AnomalyScore>> {
    model.check_snapshot(records)?;
    let working = working_matrix(records, model.metric)?;
    let dist = model.centroid_distances(&working);
    let mut out: Vec<AnomalyScore> = model
        .assignments
        .iter()
        .zip(&dist)
        .zip(&model.sample_ids)
        .filter_map(|((a, d), id)| {
            let (cid, d) = (a.as_ref()?, (*d)?);
            let stats = &model.clusters[cid].stats;
            Some(AnomalyScore {
                sample_id: id.clone(),
                z: z_score(d, stats.mean_distance, stats.std_distance),
                cluster_id: *cid,
                centroid_distance: d,
            })
        })
        .collect();
    out.sort_by(|a, b| b.z.total_cmp(&a.z).then_with(|| a.sample_id.cmp(&b.sample_id)));
    Ok(out)
}

/// Per-label centroids of labeled records in the metric's working form.
/// Unlabeled records are ignored.
pub fn layout_centroids(records: &[EmbeddingRecord], metric: DistanceMetric) -> Result<BTreeMap<String, Vec<f64>>> {
    let labeled: Vec<EmbeddingRecord> = records.iter().filter(|r| r.layout_label.is_some()).cloned().collect();
    if labeled.is_empty() {
        return Ok(BTreeMap::new());
    }
    let working = working_matrix(&labeled, metric)?;
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for (r, row) in labeled.iter().zip(working.rows()) {
        let label = r.layout_label.clone().expect("filtered");
        let entry = sums.entry(label).or_insert_with(|| (vec![0.0; row.len()], 0));
        for (a, x) in entry.0.iter_mut().zip(row.iter()) {
            *a += x;
        }
        entry.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(k, (v, n))| (k, v.into_iter().map(|x| x / n as f64).collect()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectParams {
    pub min_size: usize,
    /// Quantile of known inter-layout centroid distances a cluster must exceed.
    pub distance_quantile: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            min_size: 10,
            distance_quantile: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedCluster {
    pub cluster_id: ClusterId,
    pub size: usize,
    pub min_distance_to_known_layout: f64,
    pub nearest_layout: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Distance a cluster must exceed to be flagged.
    pub threshold: f64,
    pub flagged: Vec<FlaggedCluster>,
}

/// Flags clusters with at least `min_size` members whose centroid is farther
/// from every known layout centroid than the chosen quantile of pairwise
/// layout-centroid distances. With a single known layout the threshold is 0.
/// Ordered by distance, then size (both descending), then smallest member id.
pub fn detect_anomalous_clusters(
    model: &ClusterModel,
    layouts: &BTreeMap<String, Vec<f64>>,
    params: &DetectParams,
) -> Result<Detection> {
    if layouts.is_empty() {
        return Err(Error::NoKnownLayouts);
    }
    if !(0.0..=1.0).contains(&params.distance_quantile) {
        return Err(Error::InvalidArgument("distance_quantile must be in [0, 1]".into()));
    }
    let metric = model.metric;
    let names: Vec<&String> = layouts.keys().collect();
    let mut pairwise = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            pairwise.push(metric.distance(&layouts[names[i]], &layouts[names[j]])?);
        }
    }
    pairwise.sort_by(f64::total_cmp);
    let threshold = if pairwise.is_empty() {
        0.0
    } else {
        quantile(&pairwise, params.distance_quantile)
    };

    let mut first_member: BTreeMap<ClusterId, &str> = BTreeMap::new();
    for (id, a) in model.sample_ids.iter().zip(&model.assignments) {
        if let Some(c) = a {
            let e = first_member.entry(*c).or_insert(id.as_str());
            if id.as_str() < *e {
                *e = id.as_str();
            }
        }
    }
    let mut flagged = Vec::new();
    for (id, cluster) in &model.clusters {
        if cluster.stats.size < params.min_size {
            continue;
        }
        let mut nearest = (f64::INFINITY, names[0]);
        for name in &names {
            let d = metric.distance(&cluster.centroid, &layouts[*name])?;
            if d < nearest.0 {
                nearest = (d, name);
            }
        }
        if nearest.0 > threshold {
            flagged.push(FlaggedCluster {
                cluster_id: *id,
                size: cluster.stats.size,
                min_distance_to_known_layout: nearest.0,
                nearest_layout: nearest.1.clone(),
            });
        }
    }
    flagged.sort_by(|a, b| {
        b.min_distance_to_known_layout
            .total_cmp(&a.min_distance_to_known_layout)
            .then(b.size.cmp(&a.size))
            .then_with(|| first_member.get(&a.cluster_id).cmp(&first_member.get(&b.cluster_id)))
    });
    Ok(Detection { threshold, flagged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::kmeans::{kmeans, KMeansConfig};

    fn rec(id: &str, v: [f32; 2]) -> EmbeddingRecord {
        EmbeddingRecord::new(id, v.to_vec())
    }

    #[test]
    fn z_conventions() {
        // cluster {0, 2, 4} on a line: distances 2, 0, 2 -> mu = 4/3
        let recs = vec![
            rec("a", [0.0, 0.0]),
            rec("b", [2.0, 0.0]),
            rec("c", [4.0, 0.0]),
            rec("solo", [100.0, 0.0]),
        ];
        let m = kmeans(&recs, &KMeansConfig::new(2, 0).with_metric(DistanceMetric::Euclidean)).unwrap();
        let z = zscore_anomalies(&m, &recs).unwrap();
        assert_eq!(z.len(), 4);
        let get = |id: &str| z.iter().find(|s| s.sample_id == id).unwrap().z;
        assert_eq!(get("solo"), 0.0);
        let mu = 4.0 / 3.0;
        let sigma = ((2.0f64 * (2.0 - mu) * (2.0 - mu) + mu * mu) / 3.0).sqrt();
        assert!((get("a") - (2.0 - mu) / sigma).abs() < 1e-12);
        assert!((get("b") + mu / sigma).abs() < 1e-12);
        // ties broken by id
        assert_eq!(z[0].sample_id, "a");
        assert_eq!(z[1].sample_id, "c");
    }

    #[test]
    fn detection_rules() {
        let mut recs = Vec::new();
        for i in 0..12 {
            let j = i as f32 * 0.01;
            recs.push(rec(&format!("l0-{i:02}"), [1.0, j]).with_label("L0"));
            recs.push(rec(&format!("l1-{i:02}"), [j, 1.0]).with_label("L1"));
            recs.push(rec(&format!("f-{i:02}"), [-1.0, -1.0 + j]));
        }
        let m = kmeans(&recs, &KMeansConfig::new(3, 1)).unwrap();
        let layouts = layout_centroids(&recs, DistanceMetric::CosineDistance).unwrap();
        assert_eq!(layouts.len(), 2);
        let d = detect_anomalous_clusters(&m, &layouts, &DetectParams::default()).unwrap();
        assert_eq!(d.flagged.len(), 1);
        let fam = m.assignments[2].unwrap();
        assert_eq!(d.flagged[0].cluster_id, fam);
        assert_eq!(d.flagged[0].size, 12);

        let none = detect_anomalous_clusters(
            &m,
            &layouts,
            &DetectParams {
                min_size: 13,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(none.flagged.is_empty());
        assert!(matches!(
            detect_anomalous_clusters(&m, &BTreeMap::new(), &DetectParams::default()),
            Err(Error::NoKnownLayouts)
        ));

        // a cluster sitting on a known layout centroid is never flagged
        let mut on = BTreeMap::new();
        on.insert("F".to_string(), m.clusters[&fam].centroid.clone());
        on.insert("L0".to_string(), layouts["L0"].clone());
        let d = detect_anomalous_clusters(&m, &on, &DetectParams::default()).unwrap();
        assert!(d.flagged.iter().all(|f| f.cluster_id != fam));
    }
}
