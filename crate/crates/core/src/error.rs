use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector has (near) zero norm")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("empty input set")]
    EmptySet,

    #[error("label {label} is out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("degenerate (zero) embedding at batch row {row}")]
    DegenerateEmbedding { row: usize },
    #[error("batch of {0} samples is too small, need at least 2")]
    BatchTooSmall(usize),
    #[error("label {label} has no center row ({centers} centers)")]
    UnknownClass { label: usize, centers: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("split `{0}` is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("need at least two classes, found {0}")]
    TooFewClasses(usize),

    #[error("centroids of classes `{0}` and `{1}` coincide")]
    DegenerateCentroids(String, String),
    #[error("k = {k} exceeds the number of samples ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("invalid k range: {0}")]
    InvalidKRange(String),
    #[error("perplexity {perplexity} too large for {n} samples (need n >= 3 * perplexity)")]
    PerplexityTooLarge { perplexity: f64, n: usize },
    #[error("unknown cluster {0}")]
    UnknownCluster(usize),
    #[error("invalid percentile {0}, expected 0 < p <= 100")]
    InvalidPercentile(f64),

    #[error("cluster model is stale: fitted on snapshot {model:016x}, data is {data:016x}")]
    StaleModel { model: u64, data: u64 },
    #[error("unknown seed `{0}`")]
    UnknownSeed(String),
    #[error("no known layout centroids supplied")]
    NoKnownLayouts,
    #[error("inputs reference different dataset snapshots")]
    SnapshotMismatch,
    #[error("item `{0}` has already been reviewed")]
    AlreadyReviewed(String),
    #[error("unknown triage item `{0}`")]
    UnknownItem(String),

    #[error("row {row}: parse error: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}: vector has dimension {actual}, dataset declares {expected}")]
    RowDimensionMismatch {
        row: usize,
        expected: usize,
        actual: usize,
    },
    #[error("row {row}: duplicate sample id `{id}`")]
    DuplicateId { row: usize, id: String },
    #[error("missing header record")]
    MissingHeader,
    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("snapshot of dataset `{0}` is stale (dataset deleted)")]
    StaleSnapshot(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("job canceled")]
    Canceled,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code, used in CLI and HTTP error envelopes.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ZeroVector => "zero_vector",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptySet => "empty_set",
            Error::InvalidLabel { .. } => "invalid_label",
            Error::DegenerateEmbedding { .. } => "degenerate_embedding",
            Error::BatchTooSmall(_) => "batch_too_small",
            Error::UnknownClass { .. } => "unknown_class",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::EmptySplit(_) => "empty_split",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::TooFewClasses(_) => "too_few_classes",
            Error::DegenerateCentroids(..) => "degenerate_centroids",
            Error::KTooLarge { .. } => "k_too_large",
            Error::InvalidKRange(_) => "invalid_k_range",
            Error::PerplexityTooLarge { .. } => "perplexity_too_large",
            Error::UnknownCluster(_) => "unknown_cluster",
            Error::InvalidPercentile(_) => "invalid_percentile",
            Error::StaleModel { .. } => "stale_model",
            Error::UnknownSeed(_) => "unknown_seed",
            Error::NoKnownLayouts => "no_known_layouts",
            Error::SnapshotMismatch => "snapshot_mismatch",
            Error::AlreadyReviewed(_) => "already_reviewed",
            Error::UnknownItem(_) => "unknown_item",
            Error::Parse { .. } => "parse_error",
            Error::RowDimensionMismatch { .. } => "dimension_mismatch",
            Error::DuplicateId { .. } => "duplicate_id",
            Error::MissingHeader => "missing_header",
            Error::InfeasibleSpec(_) => "infeasible_spec",
            Error::UnknownDataset(_) => "unknown_dataset",
            Error::StaleSnapshot(_) => "stale_snapshot",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Checkpoint(_) => "checkpoint_error",
            Error::Canceled => "canceled",
            Error::Io { .. } => "io_error",
        }
    }

    /// Broad classification used for CLI exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::NonFiniteLoss { .. }
            | Error::DegenerateCentroids(..)
            | Error::Canceled
            | Error::InfeasibleSpec(_) => ErrorKind::Computation,
            _ => ErrorKind::Validation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Computation,
    Io,
}
