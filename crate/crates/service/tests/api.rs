use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use layoutspace_core::datastore::{synthesize, FamilySpec, GroundTruth, SyntheticSpec};
use layoutspace_core::discovery::FixedClock;
use layoutspace_service::{router, AppState, ServiceConfig};
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};
use tower::ServiceExt;

fn spec(seed: u64) -> SyntheticSpec {
    let mut s = SyntheticSpec::new(5, 40, 16, seed);
    s.dataset_id = "ids".into();
    s.with_labels = true;
    s.splits = Some((0.6, 0.2));
    s.fraud_families = vec![FamilySpec {
        size: 20,
        offset_scale: 3.0,
        template_jitter: 0.1,
    }];
    s
}

fn truth(seed: u64) -> GroundTruth {
    synthesize(&spec(seed)).unwrap().1
}

fn app_with(config: ServiceConfig) -> Router {
    let clock = Arc::new(FixedClock(Utc.with_ymd_and_hms(2024, 5, 6, 7, 8, 9).unwrap()));
    router(AppState::open_with_clock(config, clock).unwrap())
}

fn app() -> Router {
    app_with(ServiceConfig::default())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    call_auth(app, method, uri, body, None).await
}

async fn call_auth(app: &Router, method: &str, uri: &str, body: Option<Value>, token: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

async fn create(app: &Router, seed: u64) -> Value {
    let (s, v) = call(app, "POST", "/datasets", Some(json!({ "synthetic": spec(seed) }))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v
}

async fn wait_job(app: &Router, job_id: &str) -> Value {
    for _ in 0..2000 {
        let (s, v) = call(app, "GET", &format!("/jobs/{job_id}"), None).await;
        assert_eq!(s, StatusCode::OK);
        if matches!(v["state"].as_str(), Some("done" | "failed" | "canceled")) {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("job {job_id} did not finish");
}

async fn run_job(app: &Router, kind: &str, params: Value) -> Value {
    let (s, v) = call(app, "POST", "/datasets/ids/jobs", Some(json!({ "kind": kind, "params": params }))).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let job = wait_job(app, v["job_id"].as_str().unwrap()).await;
    assert_eq!(job["state"], "done", "{job}");
    job
}

async fn fit(app: &Router) -> u64 {
    let job = run_job(app, "kmeans", json!({ "k": 6, "seed": 3 })).await;
    job["model_version"].as_u64().unwrap()
}

#[tokio::test]
async fn health_is_open() {
    let app = app_with(ServiceConfig {
        token: Some("s3cret".into()),
        ..ServiceConfig::default()
    });
    let (s, v) = call(&app, "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({"status": "ok"}));
}

#[tokio::test]
async fn token_is_required_elsewhere() {
    let app = app_with(ServiceConfig {
        token: Some("s3cret".into()),
        ..ServiceConfig::default()
    });
    let (s, v) = call(&app, "GET", "/datasets", None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_eq!(v["code"], "unauthorized");
    let (s, _) = call_auth(&app, "GET", "/datasets", None, Some("wrong")).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = call_auth(&app, "GET", "/datasets", None, Some("s3cret")).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn unknown_things_are_404_envelopes() {
    let app = app();
    let (s, v) = call(&app, "GET", "/datasets/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "unknown_dataset");
    assert!(v["message"].is_string());
    assert!(v.get("detail").is_some());
    let (s, v) = call(&app, "GET", "/no/such/route", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "not_found");
    let (s, v) = call(&app, "GET", "/jobs/job-999999", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "unknown_job");
}

#[tokio::test]
async fn bad_bodies_are_400() {
    let app = app();
    let (s, v) = call(&app, "POST", "/datasets", Some(json!({ "bogus": 1 }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "invalid_body");
    let (s, v) = call(&app, "POST", "/datasets", Some(json!({}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "invalid_argument");
    create(&app, 1).await;
    let (s, v) = call(&app, "POST", "/datasets/ids/jobs", Some(json!({ "kind": "kmeans", "params": { "k": "x" } }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "invalid_params");
}

#[tokio::test]
async fn import_and_list() {
    let app = app();
    let v = create(&app, 1).await;
    assert_eq!(v["dataset_id"], "ids");
    assert_eq!(v["samples"], 220);
    assert_eq!(v["labeled"], 200);
    assert_eq!(v["dimension"], 16);
    let (s, v) = call(&app, "POST", "/datasets", Some(json!({ "synthetic": spec(2) }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "dataset_exists");

    let records = json!([
        { "sample_id": "a", "vector": [1.0, 0.0] },
        { "sample_id": "b", "vector": [0.0, 1.0], "layout_label": "x" },
    ]);
    let (s, v) = call(&app, "POST", "/datasets", Some(json!({ "dataset_id": "tiny", "records": records }))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["samples"], 2);
    let (_, list) = call(&app, "GET", "/datasets", None).await;
    let ids: Vec<&str> = list["datasets"].as_array().unwrap().iter().map(|d| d["dataset_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["ids", "tiny"]);
}

#[tokio::test]
async fn import_from_file_and_persist() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, _) = synthesize(&spec(4)).unwrap();
    let path = dir.path().join("in.jsonl");
    layoutspace_core::datastore::export_embeddings(&ds, &path, layoutspace_core::datastore::Format::Jsonl).unwrap();
    let config = ServiceConfig {
        data_dir: Some(dir.path().join("data")),
        ..ServiceConfig::default()
    };
    let app = app_with(config.clone());
    let (s, v) = call(&app, "POST", "/datasets", Some(json!({ "dataset_id": "fromfile", "path": path }))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    let fp = v["fingerprint"].clone();

    // a fresh service over the same directory sees the dataset
    let again = app_with(config);
    let (s, v) = call(&again, "GET", "/datasets/fromfile", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["fingerprint"], fp);
}

#[tokio::test]
async fn kmeans_job_registers_a_model() {
    let app = app();
    create(&app, 1).await;
    let job = run_job(&app, "kmeans", json!({ "k": 6, "seed": 3 })).await;
    assert_eq!(job["model_version"], 1);
    assert_eq!(job["progress"], 1.0);
    let (s, v) = call(&app, "GET", "/datasets/ids/clusters", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["version"], 1);
    assert_eq!(v["k"], 6);
    assert_eq!(v["stale"], false);
    let total: u64 = v["clusters"].as_array().unwrap().iter().map(|c| c["size"].as_u64().unwrap()).sum();
    assert_eq!(total + v["noise"].as_u64().unwrap(), 220);
    let (_, d) = call(&app, "GET", "/datasets/ids", None).await;
    assert_eq!(d["model_versions"], json!([1]));
}

#[tokio::test]
async fn job_results_are_reproducible() {
    let a = app();
    let b = app();
    create(&a, 1).await;
    create(&b, 1).await;
    for (kind, params) in [
        ("kmeans", json!({ "k": 5, "seed": 9 })),
        ("kmeans", json!({ "k_min": 3, "k_max": 7, "seed": 2 })),
        ("tsne", json!({ "iterations": 260, "perplexity": 10.0, "seed": 4 })),
        ("metrics", json!({})),
        ("train", json!({ "epochs": 2, "seed": 5, "batch_size": 32 })),
    ] {
        let x = run_job(&a, kind, params.clone()).await;
        let y = run_job(&b, kind, params.clone()).await;
        assert_eq!(x["result"], y["result"], "{kind}");
        // rerun on the same service too
        let z = run_job(&a, kind, params).await;
        assert_eq!(x["result"], z["result"], "{kind}");
    }
}

#[tokio::test]
async fn metrics_job_reports_table_values() {
    let app = app();
    create(&app, 1).await;
    let job = run_job(&app, "metrics", json!({ "metric": "euclidean" })).await;
    let r = &job["result"];
    for k in ["intra_class_mean", "inter_class_mean", "silhouette", "dbi"] {
        assert!(r[k].is_f64(), "{k}");
    }
    assert!(r["silhouette"].as_f64().unwrap() > 0.5);
}

#[tokio::test]
async fn cancel_leaves_no_model() {
    let app = app();
    // large enough to still be running when the cancel arrives
    let mut s = SyntheticSpec::new(10, 400, 64, 3);
    s.dataset_id = "ids".into();
    let (st, v) = call(&app, "POST", "/datasets", Some(json!({ "synthetic": s }))).await;
    assert_eq!(st, StatusCode::CREATED, "{v}");
    let (_, v) = call(
        &app,
        "POST",
        "/datasets/ids/jobs",
        Some(json!({ "kind": "kmeans", "params": { "k_min": 2, "k_max": 30, "seed": 1 } })),
    )
    .await;
    let id = v["job_id"].as_str().unwrap().to_string();
    let (s, conflict) = call(&app, "POST", "/datasets/ids/jobs", Some(json!({ "kind": "kmeans", "params": { "k": 3 } }))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(conflict["code"], "job_conflict");
    let (s, _) = call(&app, "DELETE", &format!("/jobs/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    let job = wait_job(&app, &id).await;
    assert_eq!(job["state"], "canceled");
    assert!(job.get("model_version").is_none());
    let (_, d) = call(&app, "GET", "/datasets/ids", None).await;
    assert_eq!(d["model_versions"], json!([]));
    let (s, v) = call(&app, "GET", "/datasets/ids/clusters", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "no_model");
    // a new job of the same kind is accepted once the old one is gone
    run_job(&app, "kmeans", json!({ "k": 3 })).await;
}

#[tokio::test]
async fn members_paginate_and_sort() {
    let app = app();
    create(&app, 1).await;
    fit(&app).await;
    let (_, summary) = call(&app, "GET", "/datasets/ids/clusters", None).await;
    let c = &summary["clusters"][0];
    let cid = c["cluster_id"].as_u64().unwrap();
    let size = c["size"].as_u64().unwrap() as usize;
    let (s, all) = call(&app, "GET", &format!("/datasets/ids/clusters/{cid}/members?sort=z&limit=1000"), None).await;
    assert_eq!(s, StatusCode::OK);
    let items = all["items"].as_array().unwrap();
    assert_eq!(items.len(), size);
    assert_eq!(all["total"], size);
    let zs: Vec<f64> = items.iter().map(|r| r["z"].as_f64().unwrap()).collect();
    assert!(zs.windows(2).all(|w| w[0] >= w[1]));
    let mut paged = Vec::new();
    let mut offset = 0;
    while offset < size {
        let (_, p) = call(&app, "GET", &format!("/datasets/ids/clusters/{cid}/members?sort=z&limit=3&offset={offset}"), None).await;
        paged.extend(p["items"].as_array().unwrap().iter().cloned());
        offset += 3;
    }
    assert_eq!(&paged, items);
    let (s, v) = call(&app, "GET", "/datasets/ids/clusters/999/members", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "unknown_cluster");
    let (s, _) = call(&app, "GET", &format!("/datasets/ids/clusters/{cid}/members?limit=0"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn refine_creates_versions_and_keeps_old_ones() {
    let app = app();
    create(&app, 1).await;
    fit(&app).await;
    let (_, v1) = call(&app, "GET", "/datasets/ids/clusters?model=1", None).await;
    let ids: Vec<u64> = v1["clusters"].as_array().unwrap().iter().map(|c| c["cluster_id"].as_u64().unwrap()).collect();
    let (s, v2) = call(
        &app,
        "POST",
        "/datasets/ids/refine",
        Some(json!({ "ops": [{ "op": "merge", "a": ids[0], "b": ids[1] }] })),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{v2}");
    assert_eq!(v2["version"], 2);
    assert_eq!(v2["k"], 5);
    assert_eq!(v2["log"][0]["version"], 2);
    let (s, v3) = call(&app, "POST", "/datasets/ids/refine", Some(json!({ "ops": [{ "op": "trim", "percentile": 100.0 }] }))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v3["version"], 3);
    assert_eq!(v3["noise"], v2["noise"]);
    // the original version is untouched and still addressable
    let (_, again) = call(&app, "GET", "/datasets/ids/clusters?model=1", None).await;
    assert_eq!(again, v1);
    let (s, v) = call(&app, "GET", "/datasets/ids/clusters?model=42", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "unknown_model");
    let (s, v) = call(&app, "POST", "/datasets/ids/refine", Some(json!({ "ops": [{ "op": "split", "cluster": 999 }] }))).await;
    assert_eq!(s, StatusCode::NOT_FOUND, "{v}");
}

#[tokio::test]
async fn projection_rows_cover_dataset() {
    let app = app();
    create(&app, 1).await;
    fit(&app).await;
    let job = run_job(&app, "tsne", json!({ "iterations": 260, "perplexity": 10.0 })).await;
    let id = job["job_id"].as_str().unwrap();
    let (s, p) = call(&app, "GET", &format!("/datasets/ids/projection?job={id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    let rows = p["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 220);
    assert!(rows.iter().all(|r| r["x"].is_f64() && r["y"].is_f64() && r["cluster_id"].is_u64()));
    let (s, v) = call(&app, "GET", "/datasets/ids/projection?job=job-777", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "unknown_projection");
}

#[tokio::test]
async fn anomalies_and_anomalous_clusters() {
    let app = app();
    create(&app, 1).await;
    fit(&app).await;
    let (s, v) = call(&app, "GET", "/datasets/ids/anomalies?top=7", None).await;
    assert_eq!(s, StatusCode::OK);
    let a = v["anomalies"].as_array().unwrap();
    assert_eq!(a.len(), 7);
    let zs: Vec<f64> = a.iter().map(|x| x["z"].as_f64().unwrap()).collect();
    assert!(zs.windows(2).all(|w| w[0] >= w[1]));

    let (s, v) = call(&app, "GET", "/datasets/ids/anomalous-clusters", None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let flagged = v["flagged"].as_array().unwrap();
    assert_eq!(flagged.len(), 1, "{v}");
    assert_eq!(flagged[0]["size"], 20);
}

#[tokio::test]
async fn expansion_finds_the_family() {
    let app = app();
    create(&app, 1).await;
    let family = &truth(1).family_members()["family-0"];
    let (s, v) = call(&app, "POST", "/datasets/ids/expand", Some(json!({ "seeds": [family[0]], "threshold": 0.9 }))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let found: BTreeSet<&str> = v["candidates"].as_array().unwrap().iter().map(|c| c["sample_id"].as_str().unwrap()).collect();
    for m in &family[1..] {
        assert!(found.contains(m.as_str()), "{m} missing");
    }
    let (_, empty) = call(&app, "POST", "/datasets/ids/expand", Some(json!({ "seeds": [family[0]], "threshold": 1.01 }))).await;
    assert_eq!(empty["candidates"], json!([]));
    assert!(empty["note"].is_string());
    let (s, v) = call(&app, "POST", "/datasets/ids/expand", Some(json!({ "seeds": ["ghost"] }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
    assert_eq!(v["code"], "unknown_seed");
}

#[tokio::test]
async fn review_round_trip() {
    let app = app();
    create(&app, 1).await;
    fit(&app).await;
    let family = truth(1).family_members()["family-0"].clone();

    // seed expansion feeds the queue
    let (s, exp) = call(&app, "POST", "/datasets/ids/expand", Some(json!({ "seeds": [family[0]] }))).await;
    assert_eq!(s, StatusCode::OK);
    let (s, q) = call(&app, "GET", "/datasets/ids/queue?limit=1000", None).await;
    assert_eq!(s, StatusCode::OK);
    let items = q["items"].as_array().unwrap();
    let ids: BTreeSet<&str> = items.iter().map(|i| i["item_id"].as_str().unwrap()).collect();
    assert_eq!(ids.len(), items.len());
    // every candidate is queued, on its own or inside a flagged cluster
    let mut covered: BTreeSet<&str> = BTreeSet::new();
    for i in items {
        if i["kind"] == "sample" {
            covered.insert(i["target_id"].as_str().unwrap());
        }
        covered.extend(i["members"].as_array().into_iter().flatten().map(|m| m.as_str().unwrap()));
    }
    let candidates = exp["candidates"].as_array().unwrap();
    assert!(!candidates.is_empty());
    for c in candidates {
        assert!(covered.contains(c["sample_id"].as_str().unwrap()), "{c}");
    }

    // a cluster verdict fans out to one audit entry per member
    let cluster = items.iter().find(|i| i["kind"] == "cluster").expect("a flagged cluster item");
    let item_id = cluster["item_id"].as_str().unwrap();
    let members: BTreeSet<&str> = cluster["members"].as_array().unwrap().iter().map(|m| m.as_str().unwrap()).collect();
    let body = json!({ "item_id": item_id, "verdict": "confirmed_fraud", "reviewer": "ana", "request_id": "r-1" });
    let (s, first) = call(&app, "POST", "/verdicts", Some(body.clone())).await;
    assert_eq!(s, StatusCode::OK, "{first}");
    assert_eq!(first["item"]["review_state"], "confirmed_fraud");
    assert_eq!(first["audit_entries"].as_array().unwrap().len(), members.len());

    // double submit returns the first result and adds nothing
    let (s, second) = call(&app, "POST", "/verdicts", Some(body)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(second, first);
    let (_, audit) = call(&app, "GET", &format!("/datasets/ids/audit?item={item_id}&limit=1000"), None).await;
    let logged: BTreeSet<&str> = audit["items"].as_array().unwrap().iter().map(|e| e["sample_id"].as_str().unwrap()).collect();
    assert_eq!(logged, members);
    assert_eq!(audit["total"], members.len());

    // a different request id for the same item is a conflict
    let (s, v) = call(
        &app,
        "POST",
        "/verdicts",
        Some(json!({ "item_id": item_id, "verdict": "skipped", "reviewer": "bo", "request_id": "r-2" })),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "already_reviewed");

    // confirmed members become the default seeds for the next expansion
    let (s, v) = call(&app, "POST", "/datasets/ids/expand", Some(json!({}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["seed_ids"].as_array().unwrap().len(), members.len());
}

#[tokio::test]
async fn verdict_validation() {
    let app = app();
    create(&app, 1).await;
    let (s, v) = call(
        &app,
        "POST",
        "/verdicts",
        Some(json!({ "item_id": "x", "verdict": "confirmed_fraud", "reviewer": "", "request_id": "q" })),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "invalid_argument");
    let (s, v) = call(&app, "POST", "/verdicts", Some(json!({ "item_id": "x", "verdict": "confirmed_fraud", "reviewer": "a" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "invalid_body");
    let (s, v) = call(
        &app,
        "POST",
        "/verdicts",
        Some(json!({ "item_id": "x", "verdict": "confirmed_fraud", "reviewer": "a", "request_id": "q2" })),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "unknown_item");
}

#[tokio::test]
async fn audit_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        data_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    };
    let app = app_with(config.clone());
    create(&app, 1).await;
    fit(&app).await;
    let (_, q) = call(&app, "GET", "/datasets/ids/queue", None).await;
    let item = q["items"][0]["item_id"].as_str().unwrap().to_string();
    let (s, _) = call(
        &app,
        "POST",
        "/verdicts",
        Some(json!({ "item_id": item, "verdict": "confirmed_genuine", "reviewer": "a", "request_id": "x" })),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (_, before) = call(&app, "GET", "/datasets/ids/audit", None).await;

    let again = app_with(config);
    let (_, after) = call(&again, "GET", "/datasets/ids/audit", None).await;
    assert_eq!(before, after);
    assert!(after["total"].as_u64().unwrap() >= 1);
}

/// Random valid calls; after each one the service state must stay coherent.
#[tokio::test]
async fn random_call_sequences_keep_invariants() {
    for seed in 0..3u64 {
        let app = app();
        let created = create(&app, 10 + seed).await;
        let fingerprint = created["fingerprint"].clone();
        let all_ids: Vec<String> = truth(10 + seed).samples.into_iter().map(|s| s.sample_id).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut frozen: BTreeMap<u64, Value> = BTreeMap::new();
        let mut request = 0;
        for _ in 0..30 {
            let versions = call(&app, "GET", "/datasets/ids", None).await.1["model_versions"].clone();
            let versions: Vec<u64> = versions.as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
            request += 1;
            match rng.random_range(0..6) {
                0 => {
                    let k = rng.random_range(2..9);
                    run_job(&app, "kmeans", json!({ "k": k, "seed": rng.random::<u32>() })).await;
                }
                1 if !versions.is_empty() => {
                    let v = versions[rng.random_range(0..versions.len())];
                    let (_, summary) = call(&app, "GET", &format!("/datasets/ids/clusters?model={v}"), None).await;
                    let cids: Vec<u64> =
                        summary["clusters"].as_array().unwrap().iter().map(|c| c["cluster_id"].as_u64().unwrap()).collect();
                    if cids.len() < 2 {
                        continue;
                    }
                    let a = cids[rng.random_range(0..cids.len())];
                    let b = *cids.iter().find(|c| **c != a).unwrap();
                    let op = match rng.random_range(0..4) {
                        0 => json!({ "op": "split", "cluster": a }),
                        1 => json!({ "op": "merge", "a": a, "b": b }),
                        2 => json!({ "op": "remove_outliers", "z_max": rng.random_range(0.5..3.0) }),
                        _ => json!({ "op": "trim", "percentile": rng.random_range(50.0..100.0), "cluster": a }),
                    };
                    let (s, v) = call(&app, "POST", "/datasets/ids/refine", Some(json!({ "model": v, "ops": [op] }))).await;
                    assert!(s == StatusCode::CREATED || s.is_client_error(), "{s} {v}");
                }
                2 => {
                    let seed_id = &all_ids[rng.random_range(0..all_ids.len())];
                    let body = json!({
                        "seeds": [seed_id],
                        "threshold": rng.random_range(0.0..1.0),
                        "max_hops": rng.random_range(1..4),
                    });
                    let (s, v) = call(&app, "POST", "/datasets/ids/expand", Some(body)).await;
                    assert_eq!(s, StatusCode::OK, "{v}");
                }
                3 | 4 => {
                    let (_, q) = call(&app, "GET", "/datasets/ids/queue?state=pending&limit=1000", None).await;
                    let items = q["items"].as_array().unwrap();
                    if items.is_empty() {
                        continue;
                    }
                    let item = &items[rng.random_range(0..items.len())];
                    let verdict = ["confirmed_fraud", "confirmed_genuine", "skipped"][rng.random_range(0..3)];
                    let body = json!({
                        "item_id": item["item_id"],
                        "verdict": verdict,
                        "reviewer": "fuzz",
                        "request_id": format!("req-{request}"),
                    });
                    let (s, first) = call(&app, "POST", "/verdicts", Some(body.clone())).await;
                    assert_eq!(s, StatusCode::OK, "{first}");
                    let (_, repeat) = call(&app, "POST", "/verdicts", Some(body)).await;
                    assert_eq!(repeat, first);
                }
                _ => {
                    let (s, _) = call(&app, "GET", "/datasets/ids/anomalies?top=5", None).await;
                    assert!(s == StatusCode::OK || s == StatusCode::NOT_FOUND);
                }
            }
            check_invariants(&app, &fingerprint, all_ids.len(), &mut frozen).await;
        }
    }
}

async fn check_invariants(app: &Router, fingerprint: &Value, n: usize, frozen: &mut BTreeMap<u64, Value>) {
    let (_, d) = call(app, "GET", "/datasets/ids", None).await;
    assert_eq!(&d["fingerprint"], fingerprint);
    let versions: Vec<u64> = d["model_versions"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert!(versions.windows(2).all(|w| w[0] < w[1]));
    for v in &versions {
        let (_, s) = call(app, "GET", &format!("/datasets/ids/clusters?model={v}"), None).await;
        assert_eq!(&s["version"].as_u64(), &Some(*v));
        let total: u64 = s["clusters"].as_array().unwrap().iter().map(|c| c["size"].as_u64().unwrap()).sum();
        assert_eq!(total + s["noise"].as_u64().unwrap(), n as u64);
        // versions never change once published
        let prev = frozen.entry(*v).or_insert_with(|| s.clone());
        assert_eq!(prev, &s);
    }
    let (_, q) = call(app, "GET", "/datasets/ids/queue?limit=10000", None).await;
    let items = q["items"].as_array().unwrap();
    let ids: BTreeSet<&str> = items.iter().map(|i| i["item_id"].as_str().unwrap()).collect();
    assert_eq!(ids.len(), items.len());
    let (_, audit) = call(app, "GET", "/datasets/ids/audit?limit=10000", None).await;
    let entries = audit["items"].as_array().unwrap();
    let seqs: Vec<u64> = entries.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert!(seqs.windows(2).all(|w| w[0] < w[1]));
    let reviewed: BTreeMap<&str, &Value> = entries.iter().map(|e| (e["item_id"].as_str().unwrap(), &e["verdict"])).collect();
    for item in items {
        let id = item["item_id"].as_str().unwrap();
        match reviewed.get(id) {
            Some(v) => assert_eq!(&item["review_state"], *v),
            None => assert_eq!(item["review_state"], "pending"),
        }
    }
}
