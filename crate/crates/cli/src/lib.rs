//! Command-line front end: every pipeline stage as a subcommand over files.
//!
//! Datasets are JSON-lines or packed embedding files, cluster models and
//! projections are JSON documents, metric heads are checkpoints. With
//! `--json` every command prints one JSON document with sorted keys.

pub mod commands;
pub mod config;
pub mod selftest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use layoutspace_core::ErrorKind;
use serde_json::{json, Value};

pub use config::{Defaults, Paths};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] layoutspace_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Computation(String),
    #[error("{path}: {source}", path = .0.display(), source = .1)]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Service(#[from] layoutspace_service::ServiceError),
}

impl CliError {
    /// 2 validation, 3 computation, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::Computation => 3,
                ErrorKind::Io => 4,
            },
            CliError::Usage(_) => 2,
            CliError::Computation(_) => 3,
            CliError::Io(..) => 4,
            CliError::Service(layoutspace_service::ServiceError::Config(_)) => 2,
            CliError::Service(layoutspace_service::ServiceError::Bind { .. }) => 4,
        }
    }

    pub fn code(&self) -> &str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Usage(_) => "invalid_argument",
            CliError::Computation(_) => "check_failed",
            CliError::Io(..) => "io_error",
            CliError::Service(layoutspace_service::ServiceError::Config(_)) => "config_error",
            CliError::Service(layoutspace_service::ServiceError::Bind { .. }) => "bind_error",
        }
    }

    pub fn envelope(&self) -> Value {
        let detail = match self {
            CliError::Io(p, _) => json!({ "path": p }),
            _ => Value::Null,
        };
        json!({ "code": self.code(), "message": self.to_string(), "detail": detail })
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// What a command produced: the JSON document and its human rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub json: Value,
    pub text: String,
    /// Nonzero when the command ran but reports a failure (selftest).
    pub exit_code: i32,
}

impl Output {
    pub fn new(json: Value, text: impl Into<String>) -> Self {
        Self {
            json,
            text: text.into(),
            exit_code: 0,
        }
    }

    pub fn json_only(json: Value) -> Self {
        let text = serde_json::to_string_pretty(&json).unwrap_or_default();
        Self::new(json, text)
    }
}

#[derive(Debug, Parser)]
#[command(name = "layoutspace", version, about = "Embedding-space analytics for document fraud discovery")]
pub struct Cli {
    /// Print one JSON document (sorted keys) instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Defaults file; `<data-dir>/layoutspace.toml` is used when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base directory for relative paths.
    #[arg(long, global = true, env = "LAYOUTSPACE_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct DatasetArg {
    /// Embedding file (`.jsonl`, `.packed` or `.idem`).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Overrides the format implied by the extension.
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an embedding file and optionally write a normalized copy.
    Import {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        dataset_id: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        out_format: Option<String>,
    },
    /// Convert a dataset to another format.
    Export {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        out_format: Option<String>,
    },
    /// Generate a synthetic dataset from a JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth file (planted families and outliers).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Train the metric-learning head on a labeled dataset with splits.
    Train {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// `arcface,supcon,center`.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        weights: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the dataset embedded by the trained head.
        #[arg(long)]
        embed_out: Option<PathBuf>,
    },
    /// Train a layout classifier and report held-out accuracy.
    Classify {
        #[command(flatten)]
        data: DatasetArg,
        /// Embed through this metric head first.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Label the records of this dataset with the trained classifier.
        #[arg(long)]
        predict: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Intra-class, inter-class, silhouette and DBI per configuration.
    Metrics {
        #[command(flatten)]
        data: DatasetArg,
        /// Grouping used as ground truth; only `layout` is supported.
        #[arg(long, default_value = "layout")]
        labels: String,
        #[arg(long)]
        metric: Option<String>,
        /// Restrict to one split (`train`, `val`, `test`).
        #[arg(long)]
        split: Option<String>,
        /// Add a row for the dataset embedded by each metric head.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
    },
    /// Fit k-means and write the cluster model.
    Cluster {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        n_init: Option<usize>,
        /// Cluster the 2-D coordinates of this projection (from `tsne --out`)
        /// instead of the embeddings; the metric then defaults to euclidean.
        #[arg(long)]
        projection: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep k and pick the best silhouette.
    SelectK {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        k_min: usize,
        #[arg(long)]
        k_max: usize,
        /// Score silhouettes on a sample of this size.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        metric: Option<String>,
        /// Fit the chosen k and write the model here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 2-D t-SNE projection.
    Tsne {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        perplexity: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// With `--rows`, colors rows by this cluster model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Plot-ready CSV (sample_id, cluster_id, x, y, centroid_distance, z).
        #[arg(long)]
        rows: Option<PathBuf>,
    },
    /// Apply refinement operations and write the next model version.
    Refine {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        model: PathBuf,
        /// JSON operation, e.g. `{"op":"split","cluster":3}`; repeatable.
        #[arg(long, required = true)]
        op: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Centroid z-score ranking and anomalous-cluster detection.
    Anomalies {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        min_size: Option<usize>,
        #[arg(long)]
        distance_quantile: Option<f64>,
    },
    /// Build the k-NN similarity graph.
    Graph {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        k_neighbors: Option<usize>,
        #[arg(long)]
        min_similarity: Option<f64>,
        /// Edge list as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expand from confirmed seeds over the similarity graph.
    Expand {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<String>,
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
        #[arg(long)]
        max_hops: Option<usize>,
        #[arg(long)]
        k_neighbors: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        min_similarity: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assemble the prioritized review queue.
    Queue {
        #[command(flatten)]
        data: DatasetArg,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Expansion result written by `expand --out`.
        #[arg(long)]
        expansion: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record a verdict on a queue item in an audit log.
    Verdict {
        #[arg(long)]
        queue: PathBuf,
        #[arg(long)]
        audit: PathBuf,
        #[arg(long)]
        item: String,
        #[arg(long)]
        verdict: String,
        #[arg(long)]
        reviewer: String,
    },
    /// Run the HTTP triage service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long, env = "LAYOUTSPACE_TOKEN")]
        token: Option<String>,
    },
    /// Compare the analytics against brute-force oracles.
    Selftest {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> CliResult<Output> {
    let paths = Paths {
        data_dir: cli.data_dir.clone(),
    };
    let defaults = Defaults::load(cli.config.as_deref(), cli.data_dir.as_deref())?;
    commands::dispatch(cli.command, &paths, &defaults)
}

/// Renders `v` with sorted keys on one line.
pub fn render_json(v: &Value) -> String {
    // serde_json's default map is ordered by key
    serde_json::to_string(v).unwrap_or_default()
}
