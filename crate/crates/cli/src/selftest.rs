//! Brute-force oracle comparisons run by `layoutspace selftest`.

use std::collections::BTreeSet;

use layoutspace_core::cluster::{kmeans, labeled_metrics, KMeansConfig};
use layoutspace_core::datastore::{read_jsonl, read_packed, write_jsonl, write_packed, Dataset};
use layoutspace_core::discovery::{build_similarity_graph, expand_from_seeds, ExpandParams, GraphParams};
use layoutspace_core::metric_learning::{
    arcface_loss, center_loss, supcon_loss, ArcFaceHead, Batch, ClassCenters, SupConConfig,
};
use layoutspace_core::{DistanceMetric, EmbeddingRecord};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::Output;

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

pub fn run(seed: u64) -> Output {
    let checks = vec![
        fixtures(),
        metric_oracle(seed),
        gradients(seed),
        centroids(seed),
        round_trip(seed),
        expansion(seed),
    ];
    let passed = checks.iter().all(|c| c.passed);
    let text = checks
        .iter()
        .map(|c| format!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail))
        .collect::<Vec<_>>()
        .join("\n");
    let json = json!({
        "passed": passed,
        "checks": checks
            .iter()
            .map(|c| json!({ "name": c.name, "passed": c.passed, "detail": c.detail }))
            .collect::<Vec<_>>(),
    });
    Output {
        json,
        text,
        exit_code: if passed { 0 } else { 3 },
    }
}

fn point(id: &str, label: &str, v: &[f32]) -> EmbeddingRecord {
    EmbeddingRecord::new(id, v.to_vec()).with_label(label)
}

fn fixtures() -> Check {
    let pairs = [
        point("p0", "a", &[0.0, 0.0]),
        point("p1", "a", &[0.0, 1.0]),
        point("p2", "b", &[10.0, 0.0]),
        point("p3", "b", &[10.0, 1.0]),
    ];
    let blobs = [
        point("b0", "a", &[0.0, 0.0]),
        point("b1", "a", &[0.0, 2.0]),
        point("b2", "b", &[10.0, 0.0]),
        point("b3", "b", &[10.0, 2.0]),
    ];
    match (
        labeled_metrics(&pairs, DistanceMetric::Euclidean),
        labeled_metrics(&blobs, DistanceMetric::Euclidean),
    ) {
        (Ok(a), Ok(b)) => check(
            "fixtures",
            (a.silhouette_mean - 0.900).abs() <= 1e-3 && (b.dbi - 0.2).abs() <= 1e-9,
            format!("silhouette {:.6}, dbi {:.12}", a.silhouette_mean, b.dbi),
        ),
        (Err(e), _) | (_, Err(e)) => check("fixtures", false, e.to_string()),
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

fn labeled_set(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> Vec<EmbeddingRecord> {
    let centers: Vec<Vec<f64>> = (0..classes).map(|_| (0..dim).map(|_| 3.0 * gaussian(rng)).collect()).collect();
    (0..n)
        .map(|i| {
            let c = i % classes;
            let v = centers[c].iter().map(|m| (m + gaussian(rng)) as f32).collect();
            EmbeddingRecord::new(format!("r{i:04}"), v).with_label(format!("c{c}"))
        })
        .collect()
}

fn dist(metric: DistanceMetric, a: &[f64], b: &[f64]) -> f64 {
    let e = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    match metric {
        DistanceMetric::Euclidean => e,
        // inputs are unit vectors here
        DistanceMetric::CosineDistance => e * e / 2.0,
    }
}

/// Double-loop silhouette, intra/inter means and DBI.
fn oracle(records: &[EmbeddingRecord], metric: DistanceMetric) -> [f64; 4] {
    let vecs: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            let v = r.to_f64();
            match metric {
                DistanceMetric::Euclidean => v,
                DistanceMetric::CosineDistance => {
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.iter().map(|x| x / n).collect()
                }
            }
        })
        .collect();
    let labels: Vec<&str> = records.iter().map(|r| r.layout_label.as_deref().unwrap_or("")).collect();
    let classes: Vec<&str> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let n = vecs.len();
    let mut sil = 0.0;
    for i in 0..n {
        let own: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if own.is_empty() {
            continue;
        }
        let a = own.iter().map(|&j| dist(metric, &vecs[i], &vecs[j])).sum::<f64>() / own.len() as f64;
        let b = classes
            .iter()
            .filter(|c| **c != labels[i])
            .map(|c| {
                let m: Vec<usize> = (0..n).filter(|&j| labels[j] == *c).collect();
                m.iter().map(|&j| dist(metric, &vecs[i], &vecs[j])).sum::<f64>() / m.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        if a.max(b) > 0.0 {
            sil += (b - a) / a.max(b);
        }
    }
    let mut intra = Vec::new();
    let mut cents = Vec::new();
    let mut scatter = Vec::new();
    for c in &classes {
        let m: Vec<usize> = (0..n).filter(|&j| labels[j] == *c).collect();
        let mut s = 0.0;
        let mut pairs = 0;
        for (x, &i) in m.iter().enumerate() {
            for &j in &m[x + 1..] {
                s += dist(metric, &vecs[i], &vecs[j]);
                pairs += 1;
            }
        }
        if pairs > 0 {
            intra.push(s / pairs as f64);
        }
        let mut cen = vec![0.0; vecs[0].len()];
        for &i in &m {
            cen.iter_mut().zip(&vecs[i]).for_each(|(a, b)| *a += b);
        }
        cen.iter_mut().for_each(|a| *a /= m.len() as f64);
        scatter.push(m.iter().map(|&i| raw_euclid_or(metric, &vecs[i], &cen)).sum::<f64>() / m.len() as f64);
        cents.push(cen);
    }
    let k = classes.len();
    let mut inter = 0.0;
    let mut pairs = 0;
    let mut dbi = 0.0;
    for i in 0..k {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..k {
            if i != j {
                let m = raw_euclid_or(metric, &cents[i], &cents[j]);
                if j > i {
                    inter += m;
                    pairs += 1;
                }
                worst = worst.max((scatter[i] + scatter[j]) / m);
            }
        }
        dbi += worst;
    }
    let intra = if intra.is_empty() { 0.0 } else { intra.iter().sum::<f64>() / intra.len() as f64 };
    [intra, inter / pairs as f64, sil / n as f64, dbi / k as f64]
}

/// Distances involving centroids, which are not unit vectors.
fn raw_euclid_or(metric: DistanceMetric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        DistanceMetric::Euclidean => dist(metric, a, b),
        DistanceMetric::CosineDistance => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            1.0 - dot / (na * nb)
        }
    }
}

fn metric_oracle(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let classes = rng.random_range(2..5);
        let n = classes * rng.random_range(3..20);
        let dim = rng.random_range(2..10);
        let metric = if case % 2 == 0 {
            DistanceMetric::Euclidean
        } else {
            DistanceMetric::CosineDistance
        };
        let recs = labeled_set(&mut rng, n, dim, classes);
        let got = match labeled_metrics(&recs, metric) {
            Ok(m) => [m.intra_class_mean, m.inter_class_mean, m.silhouette_mean, m.dbi],
            Err(e) => return check("metric-oracle", false, e.to_string()),
        };
        let want = oracle(&recs, metric);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    check("metric-oracle", worst <= 1e-9, format!("max deviation {worst:.2e} over 20 sets"))
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| gaussian(rng))
}

/// Largest central-difference error relative to the analytic gradient norm.
fn fd_error(x: &Array2<f64>, analytic: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> f64 {
    let h = 1e-5;
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    let mut worst: f64 = 0.0;
    for idx in 0..x.len() {
        let mut p = x.clone();
        let mut m = x.clone();
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        p[[r, c]] += h;
        m[[r, c]] -= h;
        let fd = (f(&p) - f(&m)) / (2.0 * h);
        worst = worst.max((fd - analytic[[r, c]]).abs() / scale);
    }
    worst
}

fn gradients(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(2..7);
        let d = rng.random_range(2..8);
        let c = rng.random_range(2..4);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let x = random_matrix(&mut rng, n, d);
        let Ok(head) = ArcFaceHead::new(random_matrix(&mut rng, c, d), 16.0, 0.3) else {
            return check("gradients", false, "cannot build head".into());
        };
        let Ok(centers) = ClassCenters::new(random_matrix(&mut rng, c, d), 0.5) else {
            return check("gradients", false, "cannot build centers".into());
        };
        let supcon = SupConConfig { temperature: 0.2 };
        let batch = |m: &Array2<f64>| Batch::new(m.clone(), labels.clone());
        let r = (|| -> layoutspace_core::Result<f64> {
            let g = arcface_loss(&batch(&x)?, &head)?;
            let a = fd_error(&x, &g.grad_embeddings, |m| {
                batch(m).and_then(|b| arcface_loss(&b, &head)).map_or(f64::NAN, |l| l.value)
            });
            let g = supcon_loss(&batch(&x)?, &supcon)?;
            let s = fd_error(&x, &g.grad_embeddings, |m| {
                batch(m).and_then(|b| supcon_loss(&b, &supcon)).map_or(f64::NAN, |l| l.value)
            });
            let g = center_loss(&batch(&x)?, &centers)?;
            let ce = fd_error(&x, &g.grad_embeddings, |m| {
                batch(m).and_then(|b| center_loss(&b, &centers)).map_or(f64::NAN, |l| l.value)
            });
            Ok(a.max(s).max(ce))
        })();
        match r {
            Ok(e) if e.is_finite() => worst = worst.max(e),
            Ok(_) => return check("gradients", false, "non-finite loss".into()),
            Err(e) => return check("gradients", false, e.to_string()),
        }
    }
    check("gradients", worst <= 1e-5, format!("max relative error {worst:.2e} over 20 batches"))
}

fn centroids(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let recs = labeled_set(&mut rng, 90, 4, 3);
    let model = match kmeans(&recs, &KMeansConfig::new(3, seed).with_metric(DistanceMetric::Euclidean)) {
        Ok(m) => m,
        Err(e) => return check("centroids", false, e.to_string()),
    };
    let mut worst: f64 = 0.0;
    for c in model.clusters.values() {
        let members = model.members(c.id);
        for (d, got) in c.centroid.iter().enumerate() {
            let mean = members.iter().map(|&i| recs_by_id(&recs, &model.sample_ids[i])[d]).sum::<f64>() / members.len() as f64;
            worst = worst.max((got - mean).abs());
        }
    }
    check("centroids", worst <= 1e-9, format!("max deviation from member means {worst:.2e}"))
}

fn recs_by_id(recs: &[EmbeddingRecord], id: &str) -> Vec<f64> {
    recs.iter().find(|r| r.sample_id == id).map(EmbeddingRecord::to_f64).unwrap_or_default()
}

fn round_trip(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let recs = labeled_set(&mut rng, 40, 6, 4);
    let ds = match Dataset::from_records("selftest", recs) {
        Ok(d) => d,
        Err(e) => return check("round-trip", false, e.to_string()),
    };
    let r = (|| -> layoutspace_core::Result<bool> {
        let mut a = Vec::new();
        write_jsonl(&ds, &mut a)?;
        let back = read_jsonl(a.as_slice())?;
        let mut b = Vec::new();
        write_packed(&ds, &mut b)?;
        let packed = read_packed(&b, "selftest")?;
        let bits = |d: &Dataset| -> Vec<(String, Vec<u32>)> {
            d.records()
                .iter()
                .map(|r| (r.sample_id.clone(), r.vector.iter().map(|x| x.to_bits()).collect()))
                .collect()
        };
        Ok(back.records() == ds.records() && bits(&packed) == bits(&ds))
    })();
    match r {
        Ok(ok) => check("round-trip", ok, "jsonl and packed reproduce every bit".into()),
        Err(e) => check("round-trip", false, e.to_string()),
    }
}

fn expansion(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let recs = labeled_set(&mut rng, 60, 5, 3);
    let graph = match build_similarity_graph(&recs, &GraphParams { k_neighbors: 6, min_similarity: -1.0 }) {
        Ok(g) => g,
        Err(e) => return check("expansion", false, e.to_string()),
    };
    let mut violations = 0;
    for _ in 0..50 {
        let seed_id = recs[rng.random_range(0..recs.len())].sample_id.clone();
        let t: f64 = rng.random_range(-1.0..1.0);
        let hops = rng.random_range(1..4);
        let set = |th: f64| -> BTreeSet<String> {
            expand_from_seeds(&graph, std::slice::from_ref(&seed_id), &ExpandParams { threshold: th, max_hops: hops })
                .map(|r| r.candidates.into_iter().map(|c| c.sample_id).collect())
                .unwrap_or_default()
        };
        if !set(t + 0.1).is_subset(&set(t)) {
            violations += 1;
        }
    }
    check("expansion", violations == 0, format!("{violations} monotonicity violations in 50 trials"))
}
