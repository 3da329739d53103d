mod common;

use std::collections::BTreeMap;

use layoutspace_core::cluster::{
    kmeans, labeled_metrics, refine_clusters, silhouette_mean, tsne_project, KMeansConfig, RefineOp, TsneParams,
};
use layoutspace_core::embedding::working_matrix;
use layoutspace_core::{DistanceMetric, EmbeddingRecord};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn blobs() -> impl Strategy<Value = Vec<EmbeddingRecord>> {
    (2usize..5, 2usize..6, 4usize..30, any::<u64>()).prop_map(|(classes, dim, per, seed)| {
        let mut rng = common::rng(seed);
        common::random_labeled(&mut rng, classes * per, dim, classes, 0.3)
    })
}

fn random_orthogonal(dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = common::rng(seed);
    let g = DMatrix::from_vec(dim, dim, common::gaussian_vec(&mut rng, dim * dim));
    g.qr().q()
}

fn transform(records: &[EmbeddingRecord], q: &DMatrix<f64>, shift: &[f64]) -> Vec<EmbeddingRecord> {
    records
        .iter()
        .map(|r| {
            let v = nalgebra::DVector::from_vec(r.to_f64());
            let out = q * v;
            let mut r = r.clone();
            r.vector = out.iter().zip(shift).map(|(x, t)| (x + t) as f32).collect();
            r
        })
        .collect()
}

/// Mean of each cluster's member vectors in working form.
fn member_means(model: &layoutspace_core::cluster::ClusterModel, records: &[EmbeddingRecord]) -> BTreeMap<usize, Vec<f64>> {
    let w = working_matrix(records, model.metric).unwrap();
    model
        .clusters
        .keys()
        .map(|&c| {
            let members = model.members(c);
            let mut mean = vec![0.0; w.ncols()];
            for &i in &members {
                for (m, x) in mean.iter_mut().zip(w.row(i)) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= members.len() as f64);
            (c, mean)
        })
        .collect()
}

fn centroids_match(model: &layoutspace_core::cluster::ClusterModel, records: &[EmbeddingRecord]) -> bool {
    let means = member_means(model, records);
    model.clusters.values().all(|c| {
        c.centroid
            .iter()
            .zip(&means[&c.id])
            .all(|(a, b)| (a - b).abs() <= 1e-9)
    })
}

fn sorted_ids(model: &layoutspace_core::cluster::ClusterModel) -> (Vec<String>, Vec<String>) {
    let mut assigned = Vec::new();
    let mut noise = Vec::new();
    for (id, a) in model.sample_ids.iter().zip(&model.assignments) {
        match a {
            Some(_) => assigned.push(id.clone()),
            None => noise.push(id.clone()),
        }
    }
    (assigned, noise)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn silhouette_survives_rotation_and_translation(recs in blobs(), seed in any::<u64>(), t in -5.0f64..5.0) {
        let dim = recs[0].vector.len();
        let q = random_orthogonal(dim, seed);
        let shift: Vec<f64> = (0..dim).map(|i| t * (i as f64 + 1.0)).collect();
        let moved = transform(&recs, &q, &shift);
        let a = labeled_metrics(&recs, DistanceMetric::Euclidean).unwrap().silhouette_mean;
        let b = labeled_metrics(&moved, DistanceMetric::Euclidean).unwrap().silhouette_mean;
        // vectors are stored as f32 after the transform
        prop_assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }

    #[test]
    fn metrics_stay_in_range(recs in blobs(), cosine in any::<bool>()) {
        let metric = if cosine { DistanceMetric::CosineDistance } else { DistanceMetric::Euclidean };
        let m = labeled_metrics(&recs, metric).unwrap();
        prop_assert!(m.per_sample_silhouette.iter().all(|s| (-1.0..=1.0).contains(s)));
        prop_assert!(m.dbi >= 0.0);
    }

    #[test]
    fn fit_centroids_are_member_means(recs in blobs(), k in 1usize..6, seed in any::<u64>(), cosine in any::<bool>()) {
        let metric = if cosine { DistanceMetric::CosineDistance } else { DistanceMetric::Euclidean };
        let k = k.min(recs.len());
        let model = kmeans(&recs, &KMeansConfig::new(k, seed).with_metric(metric)).unwrap();
        prop_assert!(model.assignments.iter().all(Option::is_some));
        prop_assert!(centroids_match(&model, &recs));
        prop_assert!(model.clusters.values().all(|c| c.stats.std_distance >= 0.0));
        for w in model.inertia_trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn refinement_conserves_samples(
        recs in blobs(),
        k in 2usize..6,
        seed in any::<u64>(),
        picks in prop::collection::vec((0usize..4, any::<prop::sample::Index>(), any::<prop::sample::Index>(), 0.5f64..3.0), 1..5),
    ) {
        let k = k.min(recs.len());
        let mut model = kmeans(&recs, &KMeansConfig::new(k, seed)).unwrap();
        let (a0, n0) = sorted_ids(&model);
        let mut all0: Vec<String> = a0.into_iter().chain(n0).collect();
        all0.sort();
        for (kind, i, j, x) in picks {
            let ids: Vec<usize> = model.clusters.keys().copied().collect();
            if ids.is_empty() {
                break;
            }
            let a = ids[i.index(ids.len())];
            let b = ids[j.index(ids.len())];
            let op = match kind {
                0 => RefineOp::Split { cluster: a },
                1 if a != b => RefineOp::Merge { a, b },
                2 => RefineOp::RemoveOutliers { z_max: x, cluster: Some(a) },
                _ => RefineOp::Trim { percentile: 100.0 - 10.0 * x, cluster: None },
            };
            let next = refine_clusters(&model, &recs, &[op]).unwrap();
            prop_assert_eq!(next.version, model.version + 1);
            let (a1, n1) = sorted_ids(&next);
            let mut all1: Vec<String> = a1.into_iter().chain(n1.iter().cloned()).collect();
            all1.sort();
            prop_assert_eq!(&all0, &all1);
            // noise only grows except through splits and merges, which never drop members
            prop_assert!(n1.len() >= sorted_ids(&model).1.len());
            prop_assert!(centroids_match(&next, &recs));
            model = next;
        }
    }
}

#[test]
fn silhouette_mean_matches_labeled_metrics() {
    let mut rng = common::rng(4);
    let recs = common::random_labeled(&mut rng, 60, 5, 3, 0.4);
    let w = working_matrix(&recs, DistanceMetric::Euclidean).unwrap();
    let names: Vec<String> = recs.iter().map(|r| r.layout_label.clone().unwrap()).collect();
    let mut uniq = names.clone();
    uniq.sort();
    uniq.dedup();
    let labels: Vec<usize> = names.iter().map(|n| uniq.iter().position(|u| u == n).unwrap()).collect();
    let a = silhouette_mean(&w, &labels, DistanceMetric::Euclidean);
    let b = labeled_metrics(&recs, DistanceMetric::Euclidean).unwrap().silhouette_mean;
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn tsne_output_is_finite() {
    let mut rng = common::rng(8);
    let recs = common::random_labeled(&mut rng, 120, 10, 4, 0.3);
    let p = tsne_project(
        &recs,
        &TsneParams {
            iterations: 250,
            perplexity: 15.0,
            ..TsneParams::default()
        },
    )
    .unwrap();
    assert_eq!(p.coordinates.len(), recs.len());
    assert!(p.coordinates.iter().flatten().all(|x| x.is_finite()));
    assert!(p.kl_divergence >= 0.0);
}
