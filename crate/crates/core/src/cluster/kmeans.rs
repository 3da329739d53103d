//! Seeded k-means (greedy k-means++ initialization, Lloyd iterations) and the
//! immutable [`ClusterModel`] it produces.
//!
//! Under cosine distance the working vectors are L2-normalized and centroids
//! are plain means of member vectors; the objective is the summed cosine
//! distance, which mean-direction updates never increase. Under euclidean
//! distance the objective is the usual sum of squared distances.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::silhouette_mean;
use crate::embedding::{fingerprint, working_matrix, DistanceMetric, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::job::JobControl;

pub type ClusterId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub size: usize,
    /// Mean member-to-centroid distance.
    pub mean_distance: f64,
    /// Population standard deviation of member-to-centroid distances.
    pub std_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: ClusterId,
    pub centroid: Vec<f64>,
    pub stats: ClusterStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RefineOp {
    Split { cluster: ClusterId },
    Merge { a: ClusterId, b: ClusterId },
    /// Moves members whose centroid-distance z-score exceeds `z_max` to noise.
    RemoveOutliers {
        z_max: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cluster: Option<ClusterId>,
    },
    /// Moves members beyond the `percentile`-th centroid-distance percentile
    /// of their cluster to noise.
    Trim {
        percentile: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cluster: Option<ClusterId>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    /// Model version this operation produced.
    pub version: u32,
    pub op: RefineOp,
    pub applied: bool,
    pub moved_to_noise: usize,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub version: u32,
    pub metric: DistanceMetric,
    /// Fingerprint of the records the model was fitted on.
    pub snapshot: u64,
    pub sample_ids: Vec<String>,
    /// Index-aligned with `sample_ids`; `None` marks the noise set.
    pub assignments: Vec<Option<ClusterId>>,
    pub clusters: BTreeMap<ClusterId, Cluster>,
    pub inertia: f64,
    /// Objective after every Lloyd iteration of the winning restart.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
    pub log: Vec<RefinementRecord>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn members(&self, id: ClusterId) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == Some(id))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn noise(&self) -> Vec<&str> {
        self.assignments
            .iter()
            .zip(&self.sample_ids)
            .filter(|(a, _)| a.is_none())
            .map(|(_, id)| id.as_str())
            .collect()
    }

    pub fn assignment_map(&self) -> BTreeMap<&str, ClusterId> {
        self.sample_ids
            .iter()
            .zip(&self.assignments)
            .filter_map(|(id, a)| a.map(|c| (id.as_str(), c)))
            .collect()
    }

    /// Errors unless `records` is exactly the set this model was fitted on.
    pub fn check_snapshot(&self, records: &[EmbeddingRecord]) -> Result<()> {
        let data = fingerprint(records);
        if data != self.snapshot {
            return Err(Error::StaleModel {
                model: self.snapshot,
                data,
            });
        }
        Ok(())
    }

    /// Distance of every sample to its assigned centroid (`None` for noise).
    pub fn centroid_distances(&self, working: &Array2<f64>) -> Vec<Option<f64>> {
        self.assignments
            .iter()
            .enumerate()
            .map(|(i, a)| {
                a.map(|c| {
                    let centroid = ArrayView1::from(&self.clusters[&c].centroid);
                    self.metric.working_distance(working.row(i), centroid)
                })
            })
            .collect()
    }

    /// Recomputes centroids, per-cluster stats and inertia from the current
    /// assignments. Clusters that lost every member are dropped.
    pub(crate) fn recompute(&mut self, working: &Array2<f64>) {
        let mut groups: BTreeMap<ClusterId, Vec<usize>> = BTreeMap::new();
        for (i, a) in self.assignments.iter().enumerate() {
            if let Some(c) = a {
                groups.entry(*c).or_default().push(i);
            }
        }
        let mut clusters = BTreeMap::new();
        let mut inertia = 0.0;
        for (id, members) in groups {
            let centroid = working.select(Axis(0), &members).mean_axis(Axis(0)).expect("non-empty");
            let dists: Vec<f64> = members
                .iter()
                .map(|&i| self.metric.working_distance(working.row(i), centroid.view()))
                .collect();
            inertia += dists.iter().map(|&d| cost(self.metric, d)).sum::<f64>();
            let n = dists.len() as f64;
            let mean = dists.iter().sum::<f64>() / n;
            let var = dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
            clusters.insert(
                id,
                Cluster {
                    id,
                    centroid: centroid.to_vec(),
                    stats: ClusterStats {
                        size: members.len(),
                        mean_distance: mean,
                        std_distance: var.max(0.0).sqrt(),
                    },
                },
            );
        }
        self.clusters = clusters;
        self.inertia = inertia;
    }
}

/// Per-sample contribution to the k-means objective.
fn cost(metric: DistanceMetric, d: f64) -> f64 {
    match metric {
        DistanceMetric::CosineDistance => d,
        DistanceMetric::Euclidean => d * d,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub rng_seed: u64,
    pub metric: DistanceMetric,
    pub max_iter: usize,
    /// Stop once no centroid moves by more than this (euclidean norm).
    pub tol: f64,
    /// Independent restarts; the lowest final objective wins.
    pub n_init: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, rng_seed: u64) -> Self {
        Self {
            k,
            rng_seed,
            metric: DistanceMetric::CosineDistance,
            max_iter: 300,
            tol: 1e-6,
            n_init: 4,
        }
    }

    pub fn with_metric(mut self, metric: DistanceMetric) -> Self {
        self.metric = metric;
        self
    }
}

fn nearest(metric: DistanceMetric, x: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.axis_iter(Axis(0)).enumerate() {
        let d = metric.working_distance(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(metric: DistanceMetric, working: &Array2<f64>, centroids: &Array2<f64>) -> Vec<(usize, f64)> {
    (0..working.nrows())
        .into_par_iter()
        .map(|i| nearest(metric, working.row(i), centroids))
        .collect()
}

fn weighted_pick<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return rng.random_range(0..weights.len());
    }
    let mut target = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if target < w {
            return i;
        }
        target -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Greedy k-means++: each new center is the best (lowest resulting
/// objective) of `2 + ln k` cost-weighted candidates.
fn init_plus_plus<R: Rng>(metric: DistanceMetric, working: &Array2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = working.nrows();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = Array2::zeros((k, working.ncols()));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&working.row(first));
    let point_costs = |c: ArrayView1<f64>| -> Vec<f64> {
        (0..n)
            .into_par_iter()
            .map(|i| cost(metric, metric.working_distance(working.row(i), c)))
            .collect()
    };
    let mut current = point_costs(working.row(first));
    for slot in 1..k {
        let mut best: Option<(usize, Vec<f64>, f64)> = None;
        for _ in 0..trials {
            let cand = weighted_pick(&current, rng);
            let with: Vec<f64> = point_costs(working.row(cand))
                .into_iter()
                .zip(&current)
                .map(|(a, &b)| a.min(b))
                .collect();
            let total: f64 = with.iter().sum();
            if best.as_ref().is_none_or(|b| total < b.2) {
                best = Some((cand, with, total));
            }
        }
        let (cand, with, _) = best.expect("at least one trial");
        centers.row_mut(slot).assign(&working.row(cand));
        current = with;
    }
    centers
}

struct Run {
    labels: Vec<usize>,
    trace: Vec<f64>,
    iterations: usize,
    objective: f64,
}

fn lloyd<R: Rng>(
    cfg: &KMeansConfig,
    working: &Array2<f64>,
    rng: &mut R,
    control: &JobControl,
) -> Result<Run> {
    let metric = cfg.metric;
    let k = cfg.k;
    let mut centroids = init_plus_plus(metric, working, k, rng);
    let mut labels = vec![0usize; working.nrows()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..cfg.max_iter.max(1) {
        control.check()?;
        iterations += 1;
        let assigned = assign(metric, working, &centroids);
        let mut costs: Vec<f64> = assigned.iter().map(|&(_, d)| cost(metric, d)).collect();
        for (l, &(c, _)) in labels.iter_mut().zip(&assigned) {
            *l = c;
        }
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        // reseed empty clusters with the currently worst-served point
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let donor = (0..labels.len())
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(b.cmp(&a)));
            if let Some(i) = donor {
                counts[labels[i]] -= 1;
                labels[i] = c;
                counts[c] = 1;
                costs[i] = 0.0;
            }
        }
        let mut next = Array2::<f64>::zeros(centroids.raw_dim());
        for (i, &l) in labels.iter().enumerate() {
            let mut row = next.row_mut(l);
            row += &working.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                next.row_mut(c).mapv_inplace(|x| x / counts[c] as f64);
            } else {
                next.row_mut(c).assign(&centroids.row(c));
            }
        }
        let shift = centroids
            .axis_iter(Axis(0))
            .zip(next.axis_iter(Axis(0)))
            .map(|(a, b)| DistanceMetric::Euclidean.working_distance(a, b))
            .fold(0.0, f64::max);
        centroids = next;
        let objective: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| cost(metric, metric.working_distance(working.row(i), centroids.row(l))))
            .sum();
        trace.push(objective);
        if shift < cfg.tol {
            break;
        }
    }
    Ok(Run {
        objective: *trace.last().expect("at least one iteration"),
        labels,
        trace,
        iterations,
    })
}

pub fn kmeans(records: &[EmbeddingRecord], cfg: &KMeansConfig) -> Result<ClusterModel> {
    kmeans_with(records, cfg, &JobControl::new())
}

pub fn kmeans_with(records: &[EmbeddingRecord], cfg: &KMeansConfig, control: &JobControl) -> Result<ClusterModel> {
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if cfg.k > records.len() {
        return Err(Error::KTooLarge {
            k: cfg.k,
            n: records.len(),
        });
    }
    let working = working_matrix(records, cfg.metric)?;
    let mut best: Option<Run> = None;
    for restart in 0..cfg.n_init.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(restart as u64);
        let run = lloyd(cfg, &working, &mut rng, control)?;
        control.set_progress((restart + 1) as f64 / cfg.n_init.max(1) as f64);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let run = best.expect("n_init >= 1");
    let mut model = ClusterModel {
        version: 1,
        metric: cfg.metric,
        snapshot: fingerprint(records),
        sample_ids: records.iter().map(|r| r.sample_id.clone()).collect(),
        assignments: run.labels.iter().map(|&l| Some(l)).collect(),
        clusters: BTreeMap::new(),
        inertia: 0.0,
        inertia_trace: run.trace,
        iterations: run.iterations,
        log: Vec::new(),
    };
    model.recompute(&working);
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectKResult {
    pub k: usize,
    /// `(k, mean silhouette)` for every candidate, ascending in k.
    pub scores: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectKConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub rng_seed: u64,
    pub metric: DistanceMetric,
    /// Silhouette is computed on a seeded subsample of this size when the set
    /// is larger; `None` uses every sample.
    pub silhouette_sample: Option<usize>,
}

/// Picks the k in `[k_min, k_max]` whose k-means fit has the highest mean
/// silhouette; ties go to the smaller k.
pub fn select_k(records: &[EmbeddingRecord], cfg: &SelectKConfig) -> Result<SelectKResult> {
    select_k_with(records, cfg, &JobControl::new())
}

pub fn select_k_with(records: &[EmbeddingRecord], cfg: &SelectKConfig, control: &JobControl) -> Result<SelectKResult> {
    let n = records.len();
    if cfg.k_min < 2 || cfg.k_min > cfg.k_max || cfg.k_max + 1 > n {
        return Err(Error::InvalidKRange(format!(
            "[{}, {}] must lie within [2, {}]",
            cfg.k_min,
            cfg.k_max,
            n.saturating_sub(1)
        )));
    }
    let working = working_matrix(records, cfg.metric)?;
    let sample: Vec<usize> = match cfg.silhouette_sample {
        Some(m) if m < n => {
            let mut idx: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x5e1e_c7ed);
            rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
            idx.truncate(m);
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    };
    let sub = working.select(Axis(0), &sample);
    let mut scores = Vec::new();
    for k in cfg.k_min..=cfg.k_max {
        let km = KMeansConfig {
            metric: cfg.metric,
            ..KMeansConfig::new(k, cfg.rng_seed)
        };
        let model = kmeans_with(records, &km, control)?;
        let labels: Vec<usize> = sample
            .iter()
            .map(|&i| model.assignments[i].expect("fresh fit has no noise"))
            .collect();
        scores.push((k, silhouette_mean(&sub, &compact(&labels), cfg.metric)));
    }
    let mut best = scores[0];
    for &(k, s) in &scores[1..] {
        if s > best.1 {
            best = (k, s);
        }
    }
    Ok(SelectKResult { k: best.0, scores })
}

/// Relabels arbitrary ids to `0..m` preserving order of first appearance.
pub(crate) fn compact(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn blobs(centers: &[[f64; 2]], per: usize, sigma: f64, seed: u64) -> (Vec<EmbeddingRecord>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut recs = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for j in 0..per {
                let v = vec![
                    (center[0] + noise.sample(&mut rng)) as f32,
                    (center[1] + noise.sample(&mut rng)) as f32,
                ];
                recs.push(EmbeddingRecord::new(format!("c{c}-{j:03}"), v));
                truth.push(c);
            }
        }
        (recs, truth)
    }

    fn purity(pred: &[Option<usize>], truth: &[usize]) -> f64 {
        let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (p, &t) in pred.iter().zip(truth) {
            *table.entry((p.unwrap(), t)).or_default() += 1;
        }
        let mut best: BTreeMap<usize, usize> = BTreeMap::new();
        for (&(p, _), &n) in &table {
            let e = best.entry(p).or_default();
            *e = (*e).max(n);
        }
        best.values().sum::<usize>() as f64 / truth.len() as f64
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let recs: Vec<_> = (0..6)
            .map(|i| EmbeddingRecord::new(format!("p{i}"), vec![i as f32, (i * i) as f32]))
            .collect();
        let cfg = KMeansConfig::new(6, 3).with_metric(DistanceMetric::Euclidean);
        let m = kmeans(&recs, &cfg).unwrap();
        assert_eq!(m.inertia, 0.0);
        assert!(m.clusters.values().all(|c| c.stats.size == 1));
        assert!(matches!(
            kmeans(&recs, &KMeansConfig::new(7, 0)),
            Err(Error::KTooLarge { k: 7, n: 6 })
        ));
    }

    #[test]
    fn separated_blobs_are_recovered() {
        // 10 sigma separation
        let (recs, truth) = blobs(&[[0.0, 0.0], [10.0, 0.0]], 50, 1.0, 4);
        let cfg = KMeansConfig::new(2, 11).with_metric(DistanceMetric::Euclidean);
        let m = kmeans(&recs, &cfg).unwrap();
        assert_eq!(purity(&m.assignments, &truth), 1.0);
        assert_eq!(m, kmeans(&recs, &cfg).unwrap());
        // centroids are member means
        let working = working_matrix(&recs, DistanceMetric::Euclidean).unwrap();
        for (id, c) in &m.clusters {
            let mean = working.select(Axis(0), &m.members(*id)).mean_axis(Axis(0)).unwrap();
            for (a, b) in mean.iter().zip(&c.centroid) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn select_k_finds_three_blobs() {
        let (recs, _) = blobs(&[[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]], 30, 1.0, 8);
        let cfg = SelectKConfig {
            k_min: 2,
            k_max: 6,
            rng_seed: 1,
            metric: DistanceMetric::Euclidean,
            silhouette_sample: None,
        };
        let r = select_k(&recs, &cfg).unwrap();
        assert_eq!(r.k, 3);
        assert_eq!(r.scores.len(), 5);

        let one = select_k(&recs, &SelectKConfig { k_min: 4, k_max: 4, ..cfg.clone() }).unwrap();
        assert_eq!(one.k, 4);

        let (single, _) = blobs(&[[0.0, 0.0]], 60, 1.0, 9);
        let r1 = select_k(&single, &SelectKConfig { k_min: 2, k_max: 4, ..cfg.clone() }).unwrap();
        let best_sep = r.scores.iter().map(|s| s.1).fold(f64::MIN, f64::max);
        let best_single = r1.scores.iter().map(|s| s.1).fold(f64::MIN, f64::max);
        assert!(best_single <= best_sep);

        assert!(select_k(&recs, &SelectKConfig { k_min: 1, ..cfg.clone() }).is_err());
        assert!(select_k(&recs, &SelectKConfig { k_max: 90, ..cfg }).is_err());
    }
}
