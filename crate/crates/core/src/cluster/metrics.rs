//! Silhouette, Davies-Bouldin and the intra/inter-class distance means that
//! make up the four-column clustering-quality table.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{working_matrix, DistanceMetric, EmbeddingRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMetrics {
    pub intra_class_mean: f64,
    pub inter_class_mean: f64,
    pub silhouette_mean: f64,
    pub per_sample_silhouette: Vec<f64>,
    pub dbi: f64,
}

/// Metrics over records grouped by `layout_label`. Unlabeled records are
/// rejected.
pub fn labeled_metrics(records: &[EmbeddingRecord], metric: DistanceMetric) -> Result<LabeledMetrics> {
    let mut names: Vec<&str> = Vec::with_capacity(records.len());
    for r in records {
        names.push(r.layout_label.as_deref().ok_or_else(|| {
            Error::InvalidArgument(format!("record `{}` has no layout label", r.sample_id))
        })?);
    }
    let (labels, classes) = index_labels(&names);
    let m = working_matrix(records, metric)?;
    metrics_for_matrix(&m, &labels, &classes, metric)
}

/// Maps string labels to dense indices in sorted label order.
pub(crate) fn index_labels(names: &[&str]) -> (Vec<usize>, Vec<String>) {
    let mut classes: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    classes.sort();
    classes.dedup();
    let lookup: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    (names.iter().map(|n| lookup[n]).collect(), classes)
}

/// Same as [`labeled_metrics`] on a working matrix (unit rows for cosine)
/// and dense labels. `class_names` is only used for error messages.
pub fn metrics_for_matrix(
    m: &Array2<f64>,
    labels: &[usize],
    class_names: &[String],
    metric: DistanceMetric,
) -> Result<LabeledMetrics> {
    let k = labels.iter().max().map_or(0, |&x| x + 1);
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let present: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::TooFewClasses(present.len()));
    }
    let name = |c: usize| class_names.get(c).cloned().unwrap_or_else(|| c.to_string());

    let centroids = class_centroids(m, labels, k);
    let mut scatter = vec![0.0; k];
    for (i, &l) in labels.iter().enumerate() {
        scatter[l] += metric.working_distance(m.row(i), centroids.row(l));
    }
    for c in &present {
        scatter[*c] /= counts[*c] as f64;
    }

    let mut dbi = 0.0;
    let mut inter_sum = 0.0;
    let mut inter_pairs = 0usize;
    for (a, &ci) in present.iter().enumerate() {
        let mut worst = f64::NEG_INFINITY;
        for (b, &cj) in present.iter().enumerate() {
            if ci == cj {
                continue;
            }
            let mij = metric.working_distance(centroids.row(ci), centroids.row(cj));
            if mij <= 0.0 {
                return Err(Error::DegenerateCentroids(name(ci), name(cj)));
            }
            if b > a {
                inter_sum += mij;
                inter_pairs += 1;
            }
            worst = worst.max((scatter[ci] + scatter[cj]) / mij);
        }
        dbi += worst;
    }
    dbi /= present.len() as f64;

    let all: Vec<usize> = (0..labels.len()).collect();
    let sums = class_distance_sums(m, labels, k, metric, &all);
    let per_sample: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| silhouette_from_sums(sums.row(i), l, &counts))
        .collect();
    let silhouette_mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;

    // sum over i of within-class distance sums counts every pair twice
    let mut intra_total = vec![0.0; k];
    for (i, &l) in labels.iter().enumerate() {
        intra_total[l] += sums[[i, l]];
    }
    let intra: Vec<f64> = present
        .iter()
        .filter(|&&c| counts[c] >= 2)
        .map(|&c| {
            let n = counts[c] as f64;
            intra_total[c] / (n * (n - 1.0))
        })
        .collect();
    let intra_class_mean = if intra.is_empty() {
        0.0
    } else {
        intra.iter().sum::<f64>() / intra.len() as f64
    };

    Ok(LabeledMetrics {
        intra_class_mean,
        inter_class_mean: inter_sum / inter_pairs as f64,
        silhouette_mean,
        per_sample_silhouette: per_sample,
        dbi,
    })
}

pub(crate) fn class_centroids(m: &Array2<f64>, labels: &[usize], k: usize) -> Array2<f64> {
    let mut c = Array2::<f64>::zeros((k, m.ncols()));
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        let mut row = c.row_mut(l);
        row += &m.row(i);
        counts[l] += 1;
    }
    for (l, &n) in counts.iter().enumerate() {
        if n > 0 {
            c.row_mut(l).mapv_inplace(|x| x / n as f64);
        }
    }
    c
}

/// `R x K` matrix: row `r` holds the summed distance from sample `rows[r]`
/// to every member of each class (self excluded).
fn class_distance_sums(m: &Array2<f64>, labels: &[usize], k: usize, metric: DistanceMetric, rows: &[usize]) -> Array2<f64> {
    let sums: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|&i| {
            let mut acc = vec![0.0; k];
            let xi = m.row(i);
            match metric {
                DistanceMetric::CosineDistance => {
                    let dots: Array1<f64> = m.dot(&xi);
                    for (j, &l) in labels.iter().enumerate() {
                        if j != i {
                            acc[l] += 1.0 - dots[j].clamp(-1.0, 1.0);
                        }
                    }
                }
                DistanceMetric::Euclidean => {
                    for (j, &l) in labels.iter().enumerate() {
                        if j != i {
                            acc[l] += metric.working_distance(xi, m.row(j));
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = Array2::zeros((rows.len(), k));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(sums) {
        dst.assign(&Array1::from(src));
    }
    out
}

fn silhouette_from_sums(sums: ArrayView1<f64>, own: usize, counts: &[usize]) -> f64 {
    if counts[own] < 2 {
        return 0.0;
    }
    let a = sums[own] / (counts[own] - 1) as f64;
    let b = counts
        .iter()
        .enumerate()
        .filter(|&(c, &n)| c != own && n > 0)
        .map(|(c, &n)| sums[c] / n as f64)
        .fold(f64::INFINITY, f64::min);
    let denom = a.max(b);
    if denom <= 0.0 || !b.is_finite() {
        return 0.0;
    }
    ((b - a) / denom).clamp(-1.0, 1.0)
}

/// Per-sample silhouette for integer cluster labels over a working matrix.
pub fn silhouette_samples(m: &Array2<f64>, labels: &[usize], metric: DistanceMetric) -> Vec<f64> {
    let all: Vec<usize> = (0..labels.len()).collect();
    silhouette_of_rows(m, labels, metric, &all)
}

/// Silhouette of the samples at `rows` only, measured against every sample.
pub fn silhouette_of_rows(m: &Array2<f64>, labels: &[usize], metric: DistanceMetric, rows: &[usize]) -> Vec<f64> {
    let k = labels.iter().max().map_or(0, |&x| x + 1);
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let sums = class_distance_sums(m, labels, k, metric, rows);
    rows.iter()
        .enumerate()
        .map(|(r, &i)| silhouette_from_sums(sums.row(r), labels[i], &counts))
        .collect()
}

pub fn silhouette_mean(m: &Array2<f64>, labels: &[usize], metric: DistanceMetric) -> f64 {
    let s = silhouette_samples(m, labels, metric);
    if s.is_empty() {
        return 0.0;
    }
    s.iter().sum::<f64>() / s.len() as f64
}
