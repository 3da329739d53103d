//! Composite metric-learning objective (ArcFace + SupCon + Center) with
//! analytic gradients, the projection head, a desk-scale trainer and the
//! layout classifier.

pub mod checkpoint;
pub mod classifier;
pub mod losses;
pub mod network;
pub mod nn;
pub mod trainer;

pub use checkpoint::{model_checkpoint, model_from_checkpoint, Checkpoint};
pub use classifier::{
    classify_layout, train_layout_classifier, Classification, ClassifierConfig, ClassifierReport, LayoutClassifier,
};
pub use losses::{
    arcface_loss, center_loss, composite_loss, composite_parts, supcon_loss, update_centers, ArcFaceHead, Batch,
    ClassCenters, ComponentValues, LossBundle, LossWeights, SupConConfig,
};
pub use network::{Encoder, ProjectionHead, PROJECTION_INPUT, PROJECTION_OUTPUT};
pub use trainer::{
    default_stages, evaluate, train_metric_head, train_metric_head_with, EpochRecord, EvalMetrics, MetricModel,
    Stage, TrainConfig, TrainReport, Trainable,
};
