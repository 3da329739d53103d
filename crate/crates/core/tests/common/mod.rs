//! Fixtures and independent reference implementations shared by the
//! integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use layoutspace_core::datastore::{synthesize, Dataset, FamilySpec, GroundTruth, OutlierSpec, SyntheticSpec};
use layoutspace_core::{DistanceMetric, EmbeddingRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng))
        .collect()
}

/// `n` labeled records around `classes` random centers, ids `r0000...`.
pub fn random_labeled(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize, spread: f64) -> Vec<EmbeddingRecord> {
    let centers: Vec<Vec<f64>> = (0..classes).map(|_| gaussian_vec(rng, dim)).collect();
    (0..n)
        .map(|i| {
            let c = if i < classes { i } else { rng.random_range(0..classes) };
            let v: Vec<f32> = centers[c]
                .iter()
                .map(|x| (x + spread * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng)) as f32)
                .collect();
            EmbeddingRecord::new(format!("r{i:04}"), v).with_label(format!("c{c}"))
        })
        .collect()
}

pub fn point(id: &str, label: &str, v: &[f32]) -> EmbeddingRecord {
    EmbeddingRecord::new(id, v.to_vec()).with_label(label)
}

pub fn raw_distance(metric: DistanceMetric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        DistanceMetric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        DistanceMetric::CosineDistance => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            1.0 - (dot / (na * nb)).clamp(-1.0, 1.0)
        }
    }
}

#[derive(Debug)]
pub struct OracleMetrics {
    pub intra: f64,
    pub inter: f64,
    pub silhouette: Vec<f64>,
    pub dbi: f64,
}

/// Straight double-loop evaluation of the labeled metrics.
pub fn oracle_metrics(records: &[EmbeddingRecord], metric: DistanceMetric) -> OracleMetrics {
    let vecs: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            let v: Vec<f64> = r.vector.iter().map(|&x| x as f64).collect();
            match metric {
                DistanceMetric::Euclidean => v,
                DistanceMetric::CosineDistance => {
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.iter().map(|x| x / n).collect()
                }
            }
        })
        .collect();
    let labels: Vec<&str> = records.iter().map(|r| r.layout_label.as_deref().unwrap()).collect();
    let mut classes: Vec<&str> = labels.clone();
    classes.sort();
    classes.dedup();
    let n = records.len();

    let mut silhouette = Vec::with_capacity(n);
    for i in 0..n {
        let own = labels.iter().filter(|&&l| l == labels[i]).count();
        if own < 2 {
            silhouette.push(0.0);
            continue;
        }
        let mut a = 0.0;
        for j in 0..n {
            if j != i && labels[j] == labels[i] {
                a += raw_distance(metric, &vecs[i], &vecs[j]);
            }
        }
        a /= (own - 1) as f64;
        let mut b = f64::INFINITY;
        for c in &classes {
            if *c == labels[i] {
                continue;
            }
            let mut s = 0.0;
            let mut cnt = 0;
            for j in 0..n {
                if labels[j] == *c {
                    s += raw_distance(metric, &vecs[i], &vecs[j]);
                    cnt += 1;
                }
            }
            b = b.min(s / cnt as f64);
        }
        silhouette.push(if a.max(b) > 0.0 { (b - a) / a.max(b) } else { 0.0 });
    }

    let mut intra_means = Vec::new();
    let mut centroids = Vec::new();
    let mut scatter = Vec::new();
    for c in &classes {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == *c).collect();
        if members.len() >= 2 {
            let mut s = 0.0;
            let mut pairs = 0;
            for (x, &i) in members.iter().enumerate() {
                for &j in &members[x + 1..] {
                    s += raw_distance(metric, &vecs[i], &vecs[j]);
                    pairs += 1;
                }
            }
            intra_means.push(s / pairs as f64);
        }
        let dim = vecs[0].len();
        let mut cen = vec![0.0; dim];
        for &i in &members {
            for d in 0..dim {
                cen[d] += vecs[i][d];
            }
        }
        cen.iter_mut().for_each(|x| *x /= members.len() as f64);
        let sc = members.iter().map(|&i| raw_distance(metric, &vecs[i], &cen)).sum::<f64>() / members.len() as f64;
        centroids.push(cen);
        scatter.push(sc);
    }
    let k = classes.len();
    let mut inter = 0.0;
    let mut pairs = 0;
    let mut dbi = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..k {
            if i == j {
                continue;
            }
            let m = raw_distance(metric, &centroids[i], &centroids[j]);
            if j > i {
                inter += m;
                pairs += 1;
            }
            worst = worst.max((scatter[i] + scatter[j]) / m);
        }
        dbi += worst;
    }
    OracleMetrics {
        intra: if intra_means.is_empty() {
            0.0
        } else {
            intra_means.iter().sum::<f64>() / intra_means.len() as f64
        },
        inter: inter / pairs as f64,
        silhouette,
        dbi: dbi / k as f64,
    }
}

/// 10-class Gaussian set with train/val/test splits for the trainer.
pub fn trainer_fixture(seed: u64) -> Vec<EmbeddingRecord> {
    let mut spec = SyntheticSpec::new(10, 60, 32, seed);
    spec.dataset_id = "trainer".into();
    spec.sigma_within = 1.0;
    spec.with_labels = true;
    spec.splits = Some((0.6, 0.2));
    synthesize(&spec).unwrap().0.records().to_vec()
}

/// 19 layouts of ~1038 samples plus three off-manifold families of 120, 96
/// and 60 members: 20,000 samples in total.
pub fn campaign_fixture(seed: u64) -> (Dataset, GroundTruth) {
    let mut spec = SyntheticSpec::new(19, 1038, 64, seed);
    spec.dataset_id = "campaign".into();
    spec.with_labels = true;
    spec.fraud_families = [120, 96, 60]
        .into_iter()
        .map(|size| FamilySpec {
            size,
            offset_scale: 3.0,
            template_jitter: 0.1,
        })
        .collect();
    spec.outliers = Some(OutlierSpec {
        count: 2,
        magnitude: 3.0,
    });
    synthesize(&spec).unwrap()
}

/// 10 layouts of 500 samples and one tight 50-member family.
pub fn expansion_fixture(seed: u64) -> (Dataset, GroundTruth) {
    let mut spec = SyntheticSpec::new(10, 500, 64, seed);
    spec.dataset_id = "expansion".into();
    spec.fraud_families = vec![FamilySpec {
        size: 50,
        offset_scale: 1.0,
        template_jitter: 0.05,
    }];
    synthesize(&spec).unwrap()
}

/// 4,980 layout samples plus 20 outliers displaced by 5 sigma.
pub fn zscore_fixture(seed: u64) -> (Dataset, GroundTruth) {
    let mut spec = SyntheticSpec::new(10, 498, 64, seed);
    spec.dataset_id = "zscore".into();
    spec.outliers = Some(OutlierSpec {
        count: 20,
        magnitude: 5.0,
    });
    synthesize(&spec).unwrap()
}

/// Dataset with arbitrary finite f32 payloads, unicode ids, labels, splits
/// and metadata.
pub fn random_dataset(rng: &mut ChaCha8Rng, case: usize) -> Dataset {
    let n = rng.random_range(1..40);
    let dim = rng.random_range(1..24);
    let alphabet: Vec<char> = "abcXYZ019_-.é漢🙂 \"\\".chars().collect();
    let mut records = BTreeMap::new();
    while records.len() < n {
        let len = rng.random_range(1..12);
        let id: String = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
        let vector: Vec<f32> = (0..dim)
            .map(|_| loop {
                let x = match rng.random_range(0..4) {
                    0 => f32::from_bits(rng.random::<u32>()),
                    1 => rng.random_range(-1.0f32..1.0),
                    2 => f32::from_bits(rng.random_range(1u32..0x0080_0000)),
                    _ => -0.0,
                };
                if x.is_finite() {
                    break x;
                }
            })
            .collect();
        let mut r = EmbeddingRecord::new(id.clone(), vector);
        if rng.random_bool(0.5) {
            r.layout_label = Some(format!("layout-{}", rng.random_range(0..5)));
        }
        if rng.random_bool(0.3) {
            r.split_tag = Some(layoutspace_core::SplitTag::Val);
        }
        if rng.random_bool(0.3) {
            r.metadata.insert("source".into(), format!("batch {}", rng.random_range(0..9)));
        }
        records.insert(id, r);
    }
    Dataset::from_records(format!("ds{case}"), records.into_values().collect()).unwrap()
}
