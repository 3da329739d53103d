//! Route handlers.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use layoutspace_core::cluster::{projection_rows, ClusterModel, refine_clusters, ClusterId, ProjectionRow, RefineOp};
use layoutspace_core::datastore::{import_embeddings, synthesize, Dataset, Format, SyntheticSpec};
use layoutspace_core::discovery::{
    assemble_triage_queue, build_similarity_graph, detect_anomalous_clusters, expand_from_seeds, layout_centroids,
    zscore_anomalies, DetectParams, ExpandParams, GraphParams, ProvenanceWeights, ReviewState, TriageSources,
};
use layoutspace_core::EmbeddingRecord;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{ApiError, ApiResult};
use crate::jobs::{self, JobKind};
use crate::state::{lock, valid_dataset_id, AppState, CachedGraph};
use crate::views::{dataset_summary, model_summary, page};

type JsonBody<T> = Result<Json<T>, JsonRejection>;
type QueryArgs<T> = Result<Query<T>, QueryRejection>;

fn body<T>(b: JsonBody<T>) -> ApiResult<T> {
    Ok(b?.0)
}

fn query<T>(q: QueryArgs<T>) -> ApiResult<T> {
    Ok(q?.0)
}

fn reply(status: StatusCode, v: Value) -> Response {
    (status, Json(v)).into_response()
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn limit(state: &AppState, requested: Option<usize>, default: usize) -> ApiResult<usize> {
    let max = state.config().max_page;
    match requested {
        Some(0) => Err(ApiError::bad_request("limit must be at least 1")),
        Some(l) if l > max => Err(ApiError::bad_request(format!("limit may not exceed {max}"))),
        Some(l) => Ok(l),
        None => Ok(default.min(max)),
    }
}

fn model_versions(state: &AppState, id: &str) -> ApiResult<Vec<u32>> {
    let ws = state.workspace(id)?;
    let versions = lock(&ws).models.keys().copied().collect();
    Ok(versions)
}

fn model_of(state: &AppState, id: &str, version: Option<u32>) -> ApiResult<Arc<ClusterModel>> {
    let ws = state.workspace(id)?;
    let model = lock(&ws).model(version);
    model
}

pub async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

pub async fn not_found() -> ApiError {
    ApiError::not_found("not_found", "no such route")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportRequest {
    pub dataset_id: Option<String>,
    pub records: Option<Vec<EmbeddingRecord>>,
    pub path: Option<PathBuf>,
    pub format: Option<Format>,
    pub synthetic: Option<SyntheticSpec>,
    pub request_id: Option<String>,
}

fn build_dataset(state: &AppState, req: ImportRequest) -> ApiResult<Dataset> {
    let sources = [req.records.is_some(), req.path.is_some(), req.synthetic.is_some()];
    if sources.iter().filter(|s| **s).count() != 1 {
        return Err(ApiError::bad_request("exactly one of `records`, `path` or `synthetic` is required"));
    }
    let mut ds = if let Some(records) = req.records {
        let id = req
            .dataset_id
            .clone()
            .ok_or_else(|| ApiError::bad_request("`dataset_id` is required with inline records"))?;
        Dataset::from_records(id, records)?.with_provenance("inline")
    } else if let Some(path) = req.path {
        let path = state.resolve_path(&path);
        let format = match req.format {
            Some(f) => f,
            None => Format::from_path(&path)
                .ok_or_else(|| ApiError::bad_request("cannot infer the format from the path; pass `format`"))?,
        };
        let mut ds = import_embeddings(&path, format)?;
        if ds.provenance.is_empty() {
            ds = ds.with_provenance(path.display().to_string());
        }
        ds
    } else {
        let spec = req.synthetic.unwrap_or_else(|| unreachable!());
        synthesize(&spec)?.0
    };
    if let Some(id) = req.dataset_id {
        ds.dataset_id = id;
    }
    if !valid_dataset_id(&ds.dataset_id) {
        return Err(ApiError::bad_request(format!("invalid dataset id `{}`", ds.dataset_id)));
    }
    Ok(ds)
}

pub async fn create_dataset(State(state): State<AppState>, req: JsonBody<ImportRequest>) -> Response {
    let req = match body(req) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    let rid = req.request_id.as_ref().map(|r| format!("POST /datasets {r}"));
    let st = state.clone();
    let (status, v) = state
        .idempotent(rid.as_deref(), || async move {
            blocking(move || {
                let ds = build_dataset(&st, req)?;
                let _guard = lock(&st.inner.creating);
                if st.workspace(&ds.dataset_id).is_ok() {
                    return Err(ApiError::conflict(
                        "dataset_exists",
                        format!("dataset `{}` already exists", ds.dataset_id),
                    ));
                }
                st.persist(&ds)?;
                let snap = st.register(ds)?;
                Ok((StatusCode::CREATED, to_value(&dataset_summary(snap.get()?, Vec::new()))))
            })
            .await
        })
        .await;
    reply(status, v)
}

pub async fn list_datasets(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    let mut out = Vec::new();
    for id in state.workspace_ids() {
        let snap = state.snapshot(&id)?;
        let versions = model_versions(&state, &id)?;
        out.push(dataset_summary(snap.get()?, versions));
    }
    Ok(Json(json!({ "datasets": out })))
}

pub async fn get_dataset(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let snap = state.snapshot(&id)?;
    let versions = model_versions(&state, &id)?;
    Ok(Json(to_value(&dataset_summary(snap.get()?, versions))))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    pub kind: JobKind,
    #[serde(default)]
    pub params: Value,
    pub request_id: Option<String>,
}

pub async fn create_job(State(state): State<AppState>, Path(id): Path<String>, req: JsonBody<JobRequest>) -> Response {
    let req = match body(req) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    let rid = req.request_id.as_ref().map(|r| format!("POST /datasets/{id}/jobs {r}"));
    let st = state.clone();
    let (status, v) = state
        .idempotent(rid.as_deref(), || async move {
            let job = jobs::submit(&st, &id, req.kind, req.params)?;
            Ok((StatusCode::ACCEPTED, to_value(&job)))
        })
        .await;
    reply(status, v)
}

pub async fn get_job(State(state): State<AppState>, Path(job_id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(to_value(&jobs::get(&state, &job_id)?)))
}

pub async fn cancel_job(State(state): State<AppState>, Path(job_id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(to_value(&jobs::cancel(&state, &job_id)?)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelQuery {
    pub model: Option<u32>,
}

pub async fn get_clusters(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: QueryArgs<ModelQuery>,
) -> ApiResult<Json<Value>> {
    let q = query(q)?;
    let snap = state.snapshot(&id)?;
    let model = model_of(&state, &id, q.model)?;
    let summary = blocking(move || Ok(model_summary(&model, snap.get()?.records()))).await?;
    Ok(Json(to_value(&summary)))
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberSort {
    #[default]
    Z,
    Distance,
    Id,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembersQuery {
    pub model: Option<u32>,
    #[serde(default)]
    pub sort: MemberSort,
    pub limit: Option<usize>,
    #[serde(default)]
    pub offset: usize,
}

pub async fn get_members(
    State(state): State<AppState>,
    Path((id, cid)): Path<(String, ClusterId)>,
    q: QueryArgs<MembersQuery>,
) -> ApiResult<Json<Value>> {
    let q = query(q)?;
    let limit = limit(&state, q.limit, 100)?;
    let snap = state.snapshot(&id)?;
    let model = model_of(&state, &id, q.model)?;
    if !model.clusters.contains_key(&cid) {
        return Err(layoutspace_core::Error::UnknownCluster(cid).into());
    }
    let mut rows: Vec<ProjectionRow> = blocking(move || Ok(projection_rows(snap.get()?.records(), &model, None)?))
        .await?
        .into_iter()
        .filter(|r| r.cluster_id == Some(cid))
        .collect();
    let key = |r: &ProjectionRow| match q.sort {
        MemberSort::Z => r.z,
        MemberSort::Distance => r.centroid_distance,
        MemberSort::Id => None,
    };
    rows.sort_by(|a, b| {
        key(b)
            .unwrap_or(f64::NEG_INFINITY)
            .total_cmp(&key(a).unwrap_or(f64::NEG_INFINITY))
            .then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    Ok(Json(to_value(&page(&rows, q.offset, limit))))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineRequest {
    pub model: Option<u32>,
    pub ops: Vec<RefineOp>,
    pub request_id: Option<String>,
}

pub async fn refine(State(state): State<AppState>, Path(id): Path<String>, req: JsonBody<RefineRequest>) -> Response {
    let req = match body(req) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    let rid = req.request_id.as_ref().map(|r| format!("POST /datasets/{id}/refine {r}"));
    let st = state.clone();
    let (status, v) = state
        .idempotent(rid.as_deref(), || async move {
            if req.ops.is_empty() {
                return Err(ApiError::bad_request("`ops` may not be empty"));
            }
            let snap = st.snapshot(&id)?;
            let ws = st.workspace(&id)?;
            blocking(move || {
                let records = snap.get()?.records();
                // the workspace lock serializes version assignment
                let mut ws = lock(&ws);
                let base = ws.model(req.model)?;
                let mut next = refine_clusters(&base, records, &req.ops)?;
                let version = ws.next_version();
                let first_new = base.log.len();
                next.version = version;
                for r in next.log.iter_mut().skip(first_new) {
                    r.version = version;
                }
                let summary = model_summary(&next, records);
                ws.models.insert(version, Arc::new(next));
                Ok((StatusCode::CREATED, to_value(&summary)))
            })
            .await
        })
        .await;
    reply(status, v)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionQuery {
    pub job: Option<String>,
    pub model: Option<u32>,
}

pub async fn get_projection(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: QueryArgs<ProjectionQuery>,
) -> ApiResult<Json<Value>> {
    let q = query(q)?;
    let snap = state.snapshot(&id)?;
    let (projection, model, job_id) = {
        let ws = state.workspace(&id)?;
        let ws = lock(&ws);
        let (job_id, p) = match &q.job {
            Some(j) => (
                j.clone(),
                ws.projections
                    .get(j)
                    .ok_or_else(|| ApiError::not_found("unknown_projection", format!("job `{j}` has no projection")))?,
            ),
            None => ws
                .projections
                .iter()
                .next_back()
                .map(|(k, v)| (k.clone(), v))
                .ok_or_else(|| ApiError::not_found("no_projection", "no projection has been computed yet"))?,
        };
        let model = match q.model {
            Some(_) => Some(ws.model(q.model)?),
            None => ws.latest_model(),
        };
        (p.result.clone(), model, job_id)
    };
    let rows = blocking(move || {
        let records = snap.get()?.records();
        let rows = match &model {
            Some(m) if m.check_snapshot(records).is_ok() => projection_rows(records, m, Some(&projection))?,
            _ => projection
                .sample_ids
                .iter()
                .zip(&projection.coordinates)
                .map(|(s, c)| ProjectionRow {
                    sample_id: s.clone(),
                    cluster_id: None,
                    x: Some(c[0]),
                    y: Some(c[1]),
                    centroid_distance: None,
                    z: None,
                })
                .collect(),
        };
        Ok(json!({
            "job_id": job_id,
            "model_version": model.map(|m| m.version),
            "method": projection.method,
            "kl_divergence": projection.kl_divergence,
            "rows": rows,
        }))
    })
    .await?;
    Ok(Json(rows))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyQuery {
    pub top: Option<usize>,
    pub model: Option<u32>,
}

pub async fn get_anomalies(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: QueryArgs<AnomalyQuery>,
) -> ApiResult<Json<Value>> {
    let q = query(q)?;
    let top = limit(&state, q.top, 50)?;
    let snap = state.snapshot(&id)?;
    let model = model_of(&state, &id, q.model)?;
    let version = model.version;
    let scores = blocking(move || Ok(zscore_anomalies(&model, snap.get()?.records())?)).await?;
    let items: Vec<_> = scores.into_iter().take(top).collect();
    Ok(Json(json!({ "model_version": version, "anomalies": items })))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectQuery {
    pub model: Option<u32>,
    pub min_size: Option<usize>,
    pub distance_quantile: Option<f64>,
}

pub async fn get_anomalous_clusters(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: QueryArgs<DetectQuery>,
) -> ApiResult<Json<Value>> {
    let q = query(q)?;
    let snap = state.snapshot(&id)?;
    let model = model_of(&state, &id, q.model)?;
    let d = DetectParams::default();
    let params = DetectParams {
        min_size: q.min_size.unwrap_or(d.min_size),
        distance_quantile: q.distance_quantile.unwrap_or(d.distance_quantile),
    };
    let version = model.version;
    let detection = blocking(move || {
        let records = snap.get()?.records();
        model.check_snapshot(records)?;
        let layouts = layout_centroids(records, model.metric)?;
        Ok(detect_anomalous_clusters(&model, &layouts, &params)?)
    })
    .await?;
    Ok(Json(json!({
        "model_version": version,
        "threshold": detection.threshold,
        "flagged": detection.flagged,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpandRequest {
    #[serde(default)]
    pub seeds: Vec<String>,
    pub threshold: Option<f64>,
    pub max_hops: Option<usize>,
    pub k_neighbors: Option<usize>,
    pub min_similarity: Option<f64>,
    pub request_id: Option<String>,
}

pub async fn expand(State(state): State<AppState>, Path(id): Path<String>, req: JsonBody<ExpandRequest>) -> Response {
    let req = match body(req) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    let rid = req.request_id.as_ref().map(|r| format!("POST /datasets/{id}/expand {r}"));
    let st = state.clone();
    let (status, v) = state
        .idempotent(rid.as_deref(), || async move {
            let snap = st.snapshot(&id)?;
            let ws = st.workspace(&id)?;
            blocking(move || {
                let records = snap.get()?.records();
                let gd = GraphParams::default();
                let gp = GraphParams {
                    k_neighbors: req.k_neighbors.unwrap_or(gd.k_neighbors),
                    min_similarity: req.min_similarity.unwrap_or(gd.min_similarity),
                };
                let ed = ExpandParams::default();
                let ep = ExpandParams {
                    threshold: req.threshold.unwrap_or(ed.threshold),
                    max_hops: req.max_hops.unwrap_or(ed.max_hops),
                };
                let mut ws = lock(&ws);
                let seeds = if req.seeds.is_empty() { ws.book.seeds() } else { req.seeds };
                if seeds.is_empty() {
                    return Err(ApiError::bad_request("no seeds given and no confirmed-fraud samples to use"));
                }
                let snapshot = layoutspace_core::embedding::fingerprint(records);
                let cached = ws.graph.as_ref().filter(|g| {
                    g.snapshot == snapshot && g.k_neighbors == gp.k_neighbors && g.min_similarity == gp.min_similarity
                });
                let graph = match cached {
                    Some(g) => g.graph.clone(),
                    None => {
                        let g = Arc::new(build_similarity_graph(records, &gp)?);
                        ws.graph = Some(CachedGraph {
                            snapshot,
                            k_neighbors: gp.k_neighbors,
                            min_similarity: gp.min_similarity,
                            graph: g.clone(),
                        });
                        g
                    }
                };
                let result = expand_from_seeds(&graph, &seeds, &ep)?;
                let mut v = to_value(&result);
                if result.candidates.is_empty() {
                    v["note"] = json!("no neighbor of the seeds reaches the similarity threshold");
                }
                ws.last_expansion = Some(result);
                Ok((StatusCode::OK, v))
            })
            .await
        })
        .await;
    reply(status, v)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueQuery {
    pub model: Option<u32>,
    pub state: Option<ReviewState>,
    pub limit: Option<usize>,
    #[serde(default)]
    pub offset: usize,
}

pub async fn get_queue(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: QueryArgs<QueueQuery>,
) -> ApiResult<Json<Value>> {
    let q = query(q)?;
    let limit = limit(&state, q.limit, 100)?;
    let snap = state.snapshot(&id)?;
    let ws = state.workspace(&id)?;
    let items = blocking(move || {
        let records = snap.get()?.records();
        let mut ws = lock(&ws);
        let model = match q.model {
            Some(_) => Some(ws.model(q.model)?),
            None => ws.latest_model(),
        };
        let model = model.filter(|m| m.check_snapshot(records).is_ok());
        let (anomalies, flagged) = match &model {
            Some(m) => {
                let anomalies = zscore_anomalies(m, records)?;
                let layouts = layout_centroids(records, m.metric).unwrap_or_default();
                let flagged = if layouts.is_empty() {
                    Vec::new()
                } else {
                    detect_anomalous_clusters(m, &layouts, &DetectParams::default())?.flagged
                };
                (anomalies, flagged)
            }
            None => (Vec::new(), Vec::new()),
        };
        let snapshot = layoutspace_core::embedding::fingerprint(records);
        let expansion = ws.last_expansion.clone().filter(|e| e.snapshot == snapshot);
        let queue = assemble_triage_queue(
            &TriageSources {
                records,
                model: model.as_deref(),
                anomalies: &anomalies,
                flagged: &flagged,
                expansion: expansion.as_ref(),
            },
            &ProvenanceWeights::default(),
        )?;
        ws.book.load_queue(&queue);
        let mut items: Vec<_> = ws.book.items().into_iter().cloned().collect();
        if let Some(s) = q.state {
            items.retain(|i| i.review_state == s);
        }
        Ok(items)
    })
    .await?;
    Ok(Json(to_value(&page(&items, q.offset, limit))))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRequest {
    pub item_id: String,
    pub verdict: ReviewState,
    pub reviewer: String,
    pub request_id: String,
    pub dataset_id: Option<String>,
}

pub async fn post_verdict(State(state): State<AppState>, req: JsonBody<VerdictRequest>) -> Response {
    let req = match body(req) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    if req.request_id.trim().is_empty() {
        return ApiError::bad_request("`request_id` may not be empty").into_response();
    }
    let rid = format!("POST /verdicts {}", req.request_id);
    let st = state.clone();
    let (status, v) = state
        .idempotent(Some(&rid), || async move {
            if req.reviewer.trim().is_empty() {
                return Err(ApiError::bad_request("`reviewer` is required"));
            }
            let candidates = match &req.dataset_id {
                Some(d) => vec![d.clone()],
                None => st.workspace_ids(),
            };
            let mut holders = Vec::new();
            for d in candidates {
                let ws = st.workspace(&d)?;
                if lock(&ws).book.item(&req.item_id).is_some() {
                    holders.push((d, ws));
                }
            }
            let (dataset_id, ws) = match holders.len() {
                0 => return Err(layoutspace_core::Error::UnknownItem(req.item_id.clone()).into()),
                1 => holders.pop().unwrap_or_else(|| unreachable!()),
                _ => {
                    return Err(ApiError::bad_request(format!(
                        "item `{}` is queued in several datasets; pass `dataset_id`",
                        req.item_id
                    )))
                }
            };
            let (item, entries) =
                lock(&ws)
                    .book
                    .record_verdict(&req.item_id, req.verdict, &req.reviewer, st.clock())?;
            Ok((
                StatusCode::OK,
                json!({ "dataset_id": dataset_id, "item": item, "audit_entries": entries }),
            ))
        })
        .await;
    reply(status, v)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditQuery {
    pub item: Option<String>,
    pub sample: Option<String>,
    pub limit: Option<usize>,
    #[serde(default)]
    pub offset: usize,
}

pub async fn get_audit(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: QueryArgs<AuditQuery>,
) -> ApiResult<Json<Value>> {
    let q = query(q)?;
    let limit = limit(&state, q.limit, 100)?;
    let ws = state.workspace(&id)?;
    let entries: Vec<_> = lock(&ws)
        .book
        .audit_log()
        .iter()
        .filter(|e| q.item.as_ref().is_none_or(|i| &e.item_id == i))
        .filter(|e| q.sample.as_ref().is_none_or(|s| &e.sample_id == s))
        .cloned()
        .collect();
    Ok(Json(to_value(&page(&entries, q.offset, limit))))
}
