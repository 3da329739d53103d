//! Vector primitives shared by every other module: records, normalization,
//! distances, centroids and pairwise structure.
//!
//! Vectors are stored as `f32` (inference outputs) and promoted to `f64` for
//! every computation in this crate.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as the zero vector.
pub const ZERO_NORM: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// One document's embedding plus identity, layout label and optional metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub sample_id: String,
    pub vector: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_tag: Option<SplitTag>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl EmbeddingRecord {
    pub fn new(sample_id: impl Into<String>, vector: Vec<f32>) -> Self {
        Self {
            sample_id: sample_id.into(),
            vector,
            layout_label: None,
            split_tag: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.layout_label = Some(label.into());
        self
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split_tag = Some(split);
        self
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&x| x as f64).collect()
    }
}

/// Which distance every analytic reports. Cosine distance is `1 - cos`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    CosineDistance,
    Euclidean,
}

impl DistanceMetric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            DistanceMetric::CosineDistance => Ok(1.0 - cosine_similarity(a, b)?),
            DistanceMetric::Euclidean => {
                check_dims(a.len(), b.len())?;
                Ok(euclidean(a, b))
            }
        }
    }

    /// Distance between two vectors already in working form (see
    /// [`working_matrix`]): unit rows for cosine, raw rows for euclidean.
    pub(crate) fn working_distance(self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match self {
            DistanceMetric::CosineDistance => {
                let na = a.dot(&a).sqrt();
                let nb = b.dot(&b).sqrt();
                if na < ZERO_NORM || nb < ZERO_NORM {
                    return 1.0;
                }
                1.0 - (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0)
            }
            DistanceMetric::Euclidean => {
                let mut s = 0.0;
                for (x, y) in a.iter().zip(b.iter()) {
                    let d = x - y;
                    s += d * d;
                }
                s.sqrt()
            }
        }
    }
}

impl std::str::FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" | "cosine_distance" => Ok(DistanceMetric::CosineDistance),
            "euclidean" => Ok(DistanceMetric::Euclidean),
            other => Err(Error::InvalidArgument(format!("unknown metric `{other}`"))),
        }
    }
}

fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n < ZERO_NORM || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Cosine similarity clamped into `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    let na = norm(a);
    let nb = norm(b);
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn centroid<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Vec<f64>> {
    let first = vectors.first().ok_or(Error::EmptySet)?.as_ref();
    let mut acc = vec![0.0; first.len()];
    for v in vectors {
        let v = v.as_ref();
        check_dims(acc.len(), v.len())?;
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Checks that all records share one dimension and returns it.
pub fn uniform_dimension(records: &[EmbeddingRecord]) -> Result<usize> {
    let first = records.first().ok_or(Error::EmptySet)?;
    let dim = first.vector.len();
    for r in records {
        check_dims(dim, r.vector.len())?;
    }
    Ok(dim)
}

/// Stable 64-bit FNV-1a fingerprint over sample ids and exact vector bits.
/// Models remember it to detect that the data changed after fitting.
pub fn fingerprint(records: &[EmbeddingRecord]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(&(records.len() as u64).to_le_bytes());
    for r in records {
        eat(&(r.sample_id.len() as u64).to_le_bytes());
        eat(r.sample_id.as_bytes());
        eat(&(r.vector.len() as u64).to_le_bytes());
        for x in &r.vector {
            eat(&x.to_bits().to_le_bytes());
        }
    }
    h
}

/// Rows of `records` as an `N x D` matrix in the metric's working form:
/// L2-normalized for cosine distance, raw for euclidean.
pub fn working_matrix(records: &[EmbeddingRecord], metric: DistanceMetric) -> Result<Array2<f64>> {
    let dim = uniform_dimension(records)?;
    let mut m = Array2::<f64>::zeros((records.len(), dim));
    for (mut row, rec) in m.axis_iter_mut(Axis(0)).zip(records) {
        for (dst, &src) in row.iter_mut().zip(&rec.vector) {
            *dst = src as f64;
        }
        if metric == DistanceMetric::CosineDistance {
            let n = row.dot(&row).sqrt();
            if n < ZERO_NORM {
                return Err(Error::ZeroVector);
            }
            row.mapv_inplace(|x| x / n);
        }
    }
    Ok(m)
}

/// Full symmetric distance matrix of a working matrix.
pub(crate) fn distance_matrix(m: &Array2<f64>, metric: DistanceMetric) -> Array2<f64> {
    let n = m.nrows();
    let mut out = Array2::<f64>::zeros((n, n));
    match metric {
        DistanceMetric::CosineDistance => {
            let gram = m.dot(&m.t());
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = 1.0 - gram[[i, j]].clamp(-1.0, 1.0);
                    out[[i, j]] = d;
                    out[[j, i]] = d;
                }
            }
        }
        DistanceMetric::Euclidean => {
            let rows: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    (0..n)
                        .map(|j| metric.working_distance(m.row(i), m.row(j)))
                        .collect()
                })
                .collect();
            for (i, row) in rows.into_iter().enumerate() {
                for (j, d) in row.into_iter().enumerate() {
                    if i != j {
                        out[[i, j]] = d;
                    }
                }
            }
            // exact symmetry regardless of summation order
            for i in 0..n {
                for j in (i + 1)..n {
                    out[[j, i]] = out[[i, j]];
                }
            }
        }
    }
    out
}

pub fn pairwise_distances(records: &[EmbeddingRecord], metric: DistanceMetric) -> Result<Array2<f64>> {
    let m = working_matrix(records, metric)?;
    Ok(distance_matrix(&m, metric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, v: &[f32]) -> EmbeddingRecord {
        EmbeddingRecord::new(id, v.to_vec())
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(l2_normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert_eq!(l2_normalize(&[0.0, 7.0, 0.0]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let v = [0.3, -2.0, 5.5];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn pairwise_examples() {
        let single = pairwise_distances(&[rec("a", &[1.0, 2.0])], DistanceMetric::Euclidean).unwrap();
        assert_eq!(single.shape(), &[1, 1]);
        assert_eq!(single[[0, 0]], 0.0);

        let same = pairwise_distances(
            &[rec("a", &[1.0, 2.0]), rec("b", &[1.0, 2.0])],
            DistanceMetric::CosineDistance,
        )
        .unwrap();
        assert!(same.iter().all(|&d| d.abs() < 1e-15));

        let d = pairwise_distances(
            &[rec("a", &[0.0, 0.0]), rec("b", &[3.0, 4.0])],
            DistanceMetric::Euclidean,
        )
        .unwrap();
        assert_eq!(d[[0, 1]], 5.0);
        assert_eq!(d[[1, 0]], 5.0);

        assert!(matches!(
            pairwise_distances(&[rec("a", &[0.0]), rec("b", &[3.0, 4.0])], DistanceMetric::Euclidean),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn centroid_examples() {
        assert_eq!(centroid(&[vec![1.5, -2.0]]).unwrap(), vec![1.5, -2.0]);
        assert_eq!(centroid(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(
            centroid(&[vec![1.0, 1.0], vec![3.0, 3.0], vec![5.0, 5.0]]).unwrap(),
            vec![3.0, 3.0]
        );
        assert!(matches!(centroid::<Vec<f64>>(&[]), Err(Error::EmptySet)));
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, dim)
    }

    proptest! {
        #[test]
        fn cosine_with_own_normalization_is_one(v in vec_strategy(7)) {
            prop_assume!(norm(&v) > 1e-6);
            let u = l2_normalize(&v).unwrap();
            prop_assert!((norm(&u) - 1.0).abs() < 1e-12);
            prop_assert!((cosine_similarity(&v, &u).unwrap() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn euclidean_triangle_inequality(pts in prop::collection::vec(vec_strategy(5), 3..8)) {
            let recs: Vec<_> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| EmbeddingRecord::new(i.to_string(), p.iter().map(|&x| x as f32).collect()))
                .collect();
            let d = pairwise_distances(&recs, DistanceMetric::Euclidean).unwrap();
            let n = recs.len();
            for i in 0..n {
                prop_assert_eq!(d[[i, i]], 0.0);
                for j in 0..n {
                    prop_assert!((d[[i, j]] - d[[j, i]]).abs() <= 1e-12);
                    for k in 0..n {
                        prop_assert!(d[[i, k]] <= d[[i, j]] + d[[j, k]] + 1e-9);
                    }
                }
            }
        }

        #[test]
        fn centroid_permutation_and_translation(
            pts in prop::collection::vec(vec_strategy(4), 1..10),
            shift in vec_strategy(4),
            rot in 0usize..10,
        ) {
            let c = centroid(&pts).unwrap();
            let mut permuted = pts.clone();
            let len = permuted.len();
            permuted.rotate_left(rot % len);
            permuted.reverse();
            let cp = centroid(&permuted).unwrap();
            for (a, b) in c.iter().zip(&cp) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let moved: Vec<Vec<f64>> = pts
                .iter()
                .map(|p| p.iter().zip(&shift).map(|(x, t)| x + t).collect())
                .collect();
            let cm = centroid(&moved).unwrap();
            for ((a, t), b) in c.iter().zip(&shift).zip(&cm) {
                prop_assert!((a + t - b).abs() < 1e-9);
            }
        }
    }
}
