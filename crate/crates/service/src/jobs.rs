//! Asynchronous jobs: k-means (with optional k sweep), t-SNE, metric-head
//! training and labeled metrics. Each runs on the blocking pool against a
//! dataset snapshot and can be canceled cooperatively.

use std::sync::Arc;

use layoutspace_core::cluster::{
    kmeans_with, labeled_metrics, select_k_with, tsne_project_with, ClusterModel, KMeansConfig, SelectKConfig,
    TsneParams,
};
use layoutspace_core::datastore::Dataset;
use layoutspace_core::metric_learning::{train_metric_head_with, LossWeights, TrainConfig};
use layoutspace_core::{DistanceMetric, Error, JobControl};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{ApiError, ApiResult, ErrorBody};
use crate::state::{lock, AppState, StoredProjection};
use crate::views::model_summary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Kmeans,
    Tsne,
    Train,
    Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
    Canceled,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed | JobState::Canceled)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub dataset_id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub progress: f64,
    pub params: Value,
    /// Cluster model version registered by a finished k-means job.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

pub(crate) struct JobEntry {
    pub job: Job,
    pub control: JobControl,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansParams {
    /// Fixed k; when absent the k in `[k_min, k_max]` with the best
    /// silhouette is used.
    pub k: Option<usize>,
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
    pub seed: u64,
    pub metric: DistanceMetric,
    pub n_init: Option<usize>,
    pub max_iter: Option<usize>,
    pub silhouette_sample: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneRequest {
    pub perplexity: Option<f64>,
    pub iterations: Option<usize>,
    pub exaggeration: Option<f64>,
    pub exaggeration_iters: Option<usize>,
    pub seed: u64,
    pub theta: Option<f64>,
    pub learning_rate: Option<f64>,
    pub pca_dims: Option<usize>,
    pub exact_limit: Option<usize>,
    pub metric: DistanceMetric,
}

impl TsneRequest {
    pub fn params(&self) -> TsneParams {
        let d = TsneParams::default();
        TsneParams {
            perplexity: self.perplexity.unwrap_or(d.perplexity),
            iterations: self.iterations.unwrap_or(d.iterations),
            exaggeration: self.exaggeration.unwrap_or(d.exaggeration),
            exaggeration_iters: self.exaggeration_iters.unwrap_or(d.exaggeration_iters),
            rng_seed: self.seed,
            theta: self.theta.unwrap_or(d.theta),
            learning_rate: self.learning_rate.or(d.learning_rate),
            pca_dims: self.pca_dims.unwrap_or(d.pca_dims),
            exact_limit: self.exact_limit.unwrap_or(d.exact_limit),
            metric: self.metric,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRequest {
    pub epochs: Option<usize>,
    pub seed: u64,
    /// `[arcface, supcon, center]`.
    pub weights: Option<[f64; 3]>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub scale: Option<f64>,
    pub margin: Option<f64>,
    pub temperature: Option<f64>,
    pub metric: DistanceMetric,
}

impl TrainRequest {
    pub fn config(&self) -> layoutspace_core::Result<TrainConfig> {
        let mut cfg = TrainConfig {
            rng_seed: self.seed,
            metric: self.metric,
            ..TrainConfig::default()
        };
        if let Some(e) = self.epochs {
            cfg.epochs = e;
            cfg.stages = layoutspace_core::metric_learning::default_stages(e);
        }
        if let Some([a, s, c]) = self.weights {
            cfg.weights = LossWeights::new(a, s, c)?;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(lr) = self.learning_rate {
            cfg.learning_rate = lr;
        }
        if let Some(s) = self.scale {
            cfg.scale = s;
        }
        if let Some(m) = self.margin {
            cfg.margin = m;
        }
        if let Some(t) = self.temperature {
            cfg.temperature = t;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsRequest {
    pub metric: DistanceMetric,
}

enum Params {
    Kmeans(KMeansParams),
    Tsne(TsneRequest),
    Train(TrainRequest),
    Metrics(MetricsRequest),
}

fn parse_params(kind: JobKind, params: &Value) -> ApiResult<Params> {
    let v = if params.is_null() { json!({}) } else { params.clone() };
    let bad = |e: serde_json::Error| ApiError::new(axum::http::StatusCode::BAD_REQUEST, "invalid_params", e.to_string());
    Ok(match kind {
        JobKind::Kmeans => Params::Kmeans(serde_json::from_value(v).map_err(bad)?),
        JobKind::Tsne => Params::Tsne(serde_json::from_value(v).map_err(bad)?),
        JobKind::Train => {
            let req: TrainRequest = serde_json::from_value(v).map_err(bad)?;
            req.config()?;
            Params::Train(req)
        }
        JobKind::Metrics => Params::Metrics(serde_json::from_value(v).map_err(bad)?),
    })
}

enum Output {
    Model(ClusterModel, Value),
    Projection(layoutspace_core::cluster::ProjectionResult, Value),
    Plain(Value),
}

fn run(params: &Params, ds: &Dataset, control: &JobControl) -> Result<Output, Error> {
    let records = ds.records();
    match params {
        Params::Kmeans(p) => {
            let (k, scores) = match p.k {
                Some(k) => (k, None),
                None => {
                    let n = records.len();
                    let cfg = SelectKConfig {
                        k_min: p.k_min.unwrap_or(2),
                        k_max: p.k_max.unwrap_or_else(|| 10.min(n.saturating_sub(1))),
                        rng_seed: p.seed,
                        metric: p.metric,
                        silhouette_sample: p.silhouette_sample,
                    };
                    let r = select_k_with(records, &cfg, control)?;
                    (r.k, Some(r.scores))
                }
            };
            let mut cfg = KMeansConfig::new(k, p.seed).with_metric(p.metric);
            if let Some(n) = p.n_init {
                cfg.n_init = n;
            }
            if let Some(m) = p.max_iter {
                cfg.max_iter = m;
            }
            let model = kmeans_with(records, &cfg, control)?;
            let mut result = serde_json::to_value(model_summary(&model, records)).unwrap_or(Value::Null);
            if let Value::Object(o) = &mut result {
                o.remove("version");
                if let Some(s) = scores {
                    o.insert("silhouette_scores".into(), json!(s));
                }
            }
            Ok(Output::Model(model, result))
        }
        Params::Tsne(p) => {
            let proj = tsne_project_with(records, &p.params(), control)?;
            let result = json!({
                "method": proj.method,
                "kl_divergence": proj.kl_divergence,
                "samples": proj.sample_ids.len(),
                "params": proj.params,
            });
            Ok(Output::Projection(proj, result))
        }
        Params::Train(p) => {
            let cfg = p.config()?;
            let report = train_metric_head_with(records, &cfg, control)?;
            Ok(Output::Plain(json!({
                "best_epoch": report.best_epoch,
                "initial": report.initial,
                "history": report.history,
                "classes": report.model.classes,
            })))
        }
        Params::Metrics(p) => {
            let labeled: Vec<_> = records.iter().filter(|r| r.layout_label.is_some()).cloned().collect();
            let m = labeled_metrics(&labeled, p.metric)?;
            Ok(Output::Plain(json!({
                "metric": p.metric,
                "samples": labeled.len(),
                "intra_class_mean": m.intra_class_mean,
                "inter_class_mean": m.inter_class_mean,
                "silhouette": m.silhouette_mean,
                "dbi": m.dbi,
            })))
        }
    }
}

fn update(state: &AppState, job_id: &str, f: impl FnOnce(&mut JobEntry)) {
    if let Some(e) = lock(&state.inner.jobs).get_mut(job_id) {
        f(e);
    }
}

/// Registers and starts a job. Rejects a second live job of the same kind on
/// the same dataset.
pub fn submit(state: &AppState, dataset_id: &str, kind: JobKind, params: Value) -> ApiResult<Job> {
    let snapshot = state.snapshot(dataset_id)?;
    let dataset = Arc::new(snapshot.get()?.clone());
    let parsed = parse_params(kind, &params)?;
    let control = JobControl::new();
    let job = {
        let mut jobs = lock(&state.inner.jobs);
        if let Some(live) = jobs
            .values()
            .find(|e| e.job.dataset_id == dataset_id && e.job.kind == kind && !e.job.state.is_terminal())
        {
            return Err(ApiError::conflict(
                "job_conflict",
                format!("job {} of this kind is still active on dataset `{dataset_id}`", live.job.job_id),
            ));
        }
        let job = Job {
            job_id: state.next_job_id(),
            dataset_id: dataset_id.to_string(),
            kind,
            state: JobState::Queued,
            progress: 0.0,
            params,
            model_version: None,
            result: None,
            error: None,
        };
        jobs.insert(
            job.job_id.clone(),
            JobEntry {
                job: job.clone(),
                control: control.clone(),
            },
        );
        job
    };

    let st = state.clone();
    let id = job.job_id.clone();
    tokio::task::spawn_blocking(move || {
        if control.is_canceled() {
            return;
        }
        update(&st, &id, |e| e.job.state = JobState::Running);
        let outcome = run(&parsed, &dataset, &control);
        finish(&st, &id, &dataset, &control, outcome);
    });
    Ok(job)
}

fn finish(state: &AppState, job_id: &str, dataset: &Arc<Dataset>, control: &JobControl, outcome: Result<Output, Error>) {
    let dataset_id = dataset.dataset_id.clone();
    let ws = state.workspace(&dataset_id).ok();
    // hold the job table while publishing so a concurrent cancel cannot
    // interleave with the result becoming visible
    let mut jobs = lock(&state.inner.jobs);
    let Some(entry) = jobs.get_mut(job_id) else { return };
    if control.is_canceled() || matches!(outcome, Err(Error::Canceled)) {
        entry.job.state = JobState::Canceled;
        return;
    }
    match outcome {
        Err(e) => {
            entry.job.state = JobState::Failed;
            entry.job.error = Some(crate::error::ApiError::from(e).body);
        }
        Ok(out) => {
            let result = match out {
                Output::Model(mut model, result) => {
                    if let Some(ws) = &ws {
                        let mut ws = lock(ws);
                        let v = ws.next_version();
                        model.version = v;
                        ws.models.insert(v, Arc::new(model));
                        entry.job.model_version = Some(v);
                    }
                    result
                }
                Output::Projection(p, result) => {
                    if let Some(ws) = &ws {
                        lock(ws).projections.insert(
                            job_id.to_string(),
                            StoredProjection {
                                result: Arc::new(p),
                                dataset: dataset.clone(),
                            },
                        );
                    }
                    result
                }
                Output::Plain(v) => v,
            };
            entry.job.result = Some(result);
            entry.job.progress = 1.0;
            entry.job.state = JobState::Done;
        }
    }
}

pub fn get(state: &AppState, job_id: &str) -> ApiResult<Job> {
    let jobs = lock(&state.inner.jobs);
    let e = jobs
        .get(job_id)
        .ok_or_else(|| ApiError::not_found("unknown_job", format!("unknown job `{job_id}`")))?;
    let mut job = e.job.clone();
    if job.state == JobState::Running {
        job.progress = e.control.progress();
    }
    Ok(job)
}

/// Requests cancellation. Finished jobs are returned unchanged.
pub fn cancel(state: &AppState, job_id: &str) -> ApiResult<Job> {
    {
        let mut jobs = lock(&state.inner.jobs);
        let e = jobs
            .get_mut(job_id)
            .ok_or_else(|| ApiError::not_found("unknown_job", format!("unknown job `{job_id}`")))?;
        if !e.job.state.is_terminal() {
            e.control.cancel();
            if e.job.state == JobState::Queued {
                e.job.state = JobState::Canceled;
            }
        }
    }
    get(state, job_id)
}
