//! HTTP/JSON triage service over the layoutspace engine: datasets, clustering
//! jobs, projections, anomaly and expansion queries, the review queue and
//! verdict recording.

mod error;
mod handlers;
pub mod jobs;
mod state;
mod views;

use std::net::SocketAddr;

use axum::extract::{Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;

pub use error::{status_for, ApiError, ApiResult, ErrorBody};
pub use jobs::{Job, JobKind, JobState};
pub use state::{valid_dataset_id, AppState, ServiceConfig};
pub use views::{ClusterView, DatasetSummary, ModelSummary, Page};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let Some(token) = state.config().token.as_deref() else {
        return next.run(req).await;
    };
    if req.uri().path() == "/health" {
        return next.run(req).await;
    }
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(token) {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token").into_response()
    }
}

pub fn router(state: AppState) -> Router {
    use handlers::*;
    Router::new()
        .route("/health", get(health))
        .route("/datasets", post(create_dataset).get(list_datasets))
        .route("/datasets/{id}", get(get_dataset))
        .route("/datasets/{id}/jobs", post(create_job))
        .route("/jobs/{job_id}", get(get_job).delete(cancel_job))
        .route("/datasets/{id}/clusters", get(get_clusters))
        .route("/datasets/{id}/clusters/{cid}/members", get(get_members))
        .route("/datasets/{id}/refine", post(refine))
        .route("/datasets/{id}/projection", get(get_projection))
        .route("/datasets/{id}/anomalies", get(get_anomalies))
        .route("/datasets/{id}/anomalous-clusters", get(get_anomalous_clusters))
        .route("/datasets/{id}/expand", post(expand))
        .route("/datasets/{id}/queue", get(get_queue))
        .route("/datasets/{id}/audit", get(get_audit))
        .route("/verdicts", post(post_verdict))
        .fallback(not_found)
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

fn check(config: &ServiceConfig) -> Result<SocketAddr, ServiceError> {
    if config.max_page == 0 {
        return Err(ServiceError::Config("max_page must be at least 1".into()));
    }
    if config.token.as_deref().is_some_and(|t| t.trim().is_empty()) {
        return Err(ServiceError::Config("token may not be empty".into()));
    }
    config
        .bind
        .parse()
        .map_err(|e| ServiceError::Config(format!("bind address `{}`: {e}", config.bind)))
}

/// Binds and serves until ctrl-c.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let addr = check(&config)?;
    let state = AppState::open(config).map_err(|e| ServiceError::Config(e.to_string()))?;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| ServiceError::Bind {
            addr: addr.to_string(),
            source,
        })
}
