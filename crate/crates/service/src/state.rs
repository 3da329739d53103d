//! Shared service state: the dataset store, per-dataset workspaces (model
//! versions, projections, graph cache, triage book), jobs and the
//! idempotency cache.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::http::StatusCode;
use layoutspace_core::cluster::{ClusterModel, ProjectionResult};
use layoutspace_core::datastore::{export_embeddings, import_embeddings, Dataset, DatasetStore, Format, Snapshot};
use layoutspace_core::discovery::{Clock, ExpansionResult, SimilarityGraph, SystemClock, TriageBook};
use layoutspace_core::embedding::fingerprint;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::OnceCell;

use crate::error::{ApiError, ApiResult};
use crate::jobs::JobEntry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// `host:port` to listen on.
    pub bind: String,
    /// Datasets and audit logs persist here when set.
    pub data_dir: Option<PathBuf>,
    /// Static bearer token required on every route except `/health`.
    pub token: Option<String>,
    /// Upper bound on `limit` for paginated listings.
    pub max_page: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            data_dir: None,
            token: None,
            max_page: 10_000,
        }
    }
}

/// A projection together with the dataset snapshot it was computed on.
pub struct StoredProjection {
    pub result: Arc<ProjectionResult>,
    pub dataset: Arc<Dataset>,
}

pub struct CachedGraph {
    pub snapshot: u64,
    pub k_neighbors: usize,
    pub min_similarity: f64,
    pub graph: Arc<SimilarityGraph>,
}

/// Everything derived from one dataset.
pub struct Workspace {
    pub models: BTreeMap<u32, Arc<ClusterModel>>,
    pub projections: BTreeMap<String, StoredProjection>,
    pub graph: Option<CachedGraph>,
    pub last_expansion: Option<ExpansionResult>,
    pub book: TriageBook,
}

impl Workspace {
    pub fn latest_model(&self) -> Option<Arc<ClusterModel>> {
        self.models.values().next_back().cloned()
    }

    pub fn next_version(&self) -> u32 {
        self.models.keys().next_back().map_or(1, |v| v + 1)
    }

    pub fn model(&self, version: Option<u32>) -> ApiResult<Arc<ClusterModel>> {
        match version {
            Some(v) => self
                .models
                .get(&v)
                .cloned()
                .ok_or_else(|| ApiError::not_found("unknown_model", format!("no model version {v}"))),
            None => self
                .latest_model()
                .ok_or_else(|| ApiError::not_found("no_model", "no cluster model has been fitted yet")),
        }
    }
}

type Stored = Arc<OnceCell<(u16, Value)>>;

pub(crate) struct Inner {
    pub config: ServiceConfig,
    pub store: DatasetStore,
    pub workspaces: Mutex<BTreeMap<String, Arc<Mutex<Workspace>>>>,
    pub jobs: Mutex<BTreeMap<String, JobEntry>>,
    pub next_job: AtomicU64,
    pub requests: Mutex<HashMap<String, Stored>>,
    pub clock: Arc<dyn Clock>,
    pub creating: Mutex<()>,
}

#[derive(Clone)]
pub struct AppState {
    pub(crate) inner: Arc<Inner>,
}

pub(crate) fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

pub fn valid_dataset_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl AppState {
    /// Loads persisted datasets when a data directory is configured.
    pub fn open(config: ServiceConfig) -> layoutspace_core::Result<Self> {
        Self::open_with_clock(config, Arc::new(SystemClock))
    }

    pub fn open_with_clock(config: ServiceConfig, clock: Arc<dyn Clock>) -> layoutspace_core::Result<Self> {
        let state = Self {
            inner: Arc::new(Inner {
                config,
                store: DatasetStore::new(),
                workspaces: Mutex::new(BTreeMap::new()),
                jobs: Mutex::new(BTreeMap::new()),
                next_job: AtomicU64::new(1),
                requests: Mutex::new(HashMap::new()),
                clock,
                creating: Mutex::new(()),
            }),
        };
        if let Some(dir) = state.dataset_dir() {
            if dir.is_dir() {
                let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
                    .map_err(|e| io_error(&dir, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                    .collect();
                paths.sort();
                for p in paths {
                    let ds = import_embeddings(&p, Format::Jsonl)?;
                    state.register(ds)?;
                }
            }
        }
        Ok(state)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub(crate) fn clock(&self) -> &dyn Clock {
        self.inner.clock.as_ref()
    }

    pub fn store(&self) -> &DatasetStore {
        &self.inner.store
    }

    fn dataset_dir(&self) -> Option<PathBuf> {
        self.inner.config.data_dir.as_ref().map(|d| d.join("datasets"))
    }

    fn audit_path(&self, id: &str) -> Option<PathBuf> {
        self.inner.config.data_dir.as_ref().map(|d| d.join("audit").join(format!("{id}.jsonl")))
    }

    /// Adds a dataset to the store and creates its workspace.
    pub(crate) fn register(&self, ds: Dataset) -> layoutspace_core::Result<Snapshot> {
        let id = ds.dataset_id.clone();
        let book = match self.audit_path(&id) {
            Some(p) => {
                if let Some(parent) = p.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
                }
                TriageBook::with_log_file(p)?
            }
            None => TriageBook::new(),
        };
        let snap = self.inner.store.put(ds);
        lock(&self.inner.workspaces).insert(
            id,
            Arc::new(Mutex::new(Workspace {
                models: BTreeMap::new(),
                projections: BTreeMap::new(),
                graph: None,
                last_expansion: None,
                book,
            })),
        );
        Ok(snap)
    }

    pub(crate) fn persist(&self, ds: &Dataset) -> layoutspace_core::Result<()> {
        if let Some(dir) = self.dataset_dir() {
            std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
            export_embeddings(ds, &dir.join(format!("{}.jsonl", ds.dataset_id)), Format::Jsonl)?;
        }
        Ok(())
    }

    pub(crate) fn resolve_path(&self, p: &Path) -> PathBuf {
        match &self.inner.config.data_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn snapshot(&self, id: &str) -> ApiResult<Snapshot> {
        Ok(self.inner.store.snapshot(id)?)
    }

    pub fn workspace(&self, id: &str) -> ApiResult<Arc<Mutex<Workspace>>> {
        lock(&self.inner.workspaces)
            .get(id)
            .cloned()
            .ok_or_else(|| layoutspace_core::Error::UnknownDataset(id.to_string()).into())
    }

    pub fn workspace_ids(&self) -> Vec<String> {
        lock(&self.inner.workspaces).keys().cloned().collect()
    }

    pub(crate) fn next_job_id(&self) -> String {
        format!("job-{:06}", self.inner.next_job.fetch_add(1, Ordering::SeqCst))
    }

    /// Runs `f` once per request id; later calls with the same id get the
    /// first outcome, errors included.
    pub(crate) async fn idempotent<F, Fut>(&self, request_id: Option<&str>, f: F) -> (StatusCode, Value)
    where
        F: FnOnce() -> Fut,
        Fut: std::future::Future<Output = ApiResult<(StatusCode, Value)>>,
    {
        let run = || async {
            match f().await {
                Ok((s, v)) => (s.as_u16(), v),
                Err(e) => (e.status.as_u16(), serde_json::to_value(&e.body).unwrap_or(Value::Null)),
            }
        };
        let (status, body) = match request_id {
            None => run().await,
            Some(rid) => {
                let cell = lock(&self.inner.requests).entry(rid.to_string()).or_default().clone();
                cell.get_or_init(run).await.clone()
            }
        };
        (StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR), body)
    }
}

pub(crate) fn io_error(path: &Path, e: std::io::Error) -> layoutspace_core::Error {
    layoutspace_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn snapshot_hex(records: &[layoutspace_core::EmbeddingRecord]) -> String {
    format!("{:016x}", fingerprint(records))
}
