//! Desk-scale metric-learning trainer.
//!
//! Raw feature vectors go through a small dense [`Encoder`] (standing in for
//! the pretrained backbone) and the [`ProjectionHead`]; the composite loss is
//! minimized with mini-batch SGD under a staged unfreezing schedule. The best
//! checkpoint is picked by validation silhouette, then lower DBI, then the
//! earlier epoch.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{
    composite_parts, update_centers, ArcFaceHead, Batch, ClassCenters, LossWeights, SupConConfig,
};
use super::network::{Encoder, ProjectionHead, PROJECTION_INPUT, PROJECTION_OUTPUT};
use super::nn::{sgd_step, DropoutKey};
use crate::cluster::metrics::{index_labels, metrics_for_matrix, LabeledMetrics};
use crate::embedding::{DistanceMetric, EmbeddingRecord, SplitTag, ZERO_NORM};
use crate::error::{Error, Result};
use crate::job::JobControl;

/// Which parameters receive updates during a stage. Heads (projection,
/// ArcFace weights, centers) are always trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "layers")]
pub enum Trainable {
    Heads,
    TopEncoderLayers(usize),
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub epochs: usize,
    pub trainable: Trainable,
    /// Multiplies [`TrainConfig::learning_rate`].
    pub lr_scale: f64,
}

/// Warm-up with a frozen encoder, partial unfreezing of the top encoder
/// layer, then full fine-tuning at a tenth of the partial rate.
pub fn default_stages(epochs: usize) -> Vec<Stage> {
    let warmup = (epochs * 2).div_ceil(5);
    let partial = (epochs * 3) / 10;
    vec![
        Stage {
            name: "warmup".into(),
            epochs: warmup,
            trainable: Trainable::Heads,
            lr_scale: 1.0,
        },
        Stage {
            name: "partial_unfreeze".into(),
            epochs: partial,
            trainable: Trainable::TopEncoderLayers(1),
            lr_scale: 0.5,
        },
        Stage {
            name: "full_finetune".into(),
            epochs: epochs.saturating_sub(warmup + partial),
            trainable: Trainable::All,
            lr_scale: 0.05,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub scale: f64,
    pub margin: f64,
    pub temperature: f64,
    pub center_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Consumed in order; the last stage persists past the end of the list.
    pub stages: Vec<Stage>,
    pub encoder_hidden: Vec<usize>,
    pub encoder_output: usize,
    pub projection_hidden: usize,
    pub projection_output: usize,
    pub dropout: f64,
    pub metric: DistanceMetric,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let epochs = 30;
        Self {
            weights: LossWeights::default(),
            scale: 30.0,
            margin: 0.5,
            temperature: 0.1,
            center_lr: 0.5,
            epochs,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            stages: default_stages(epochs),
            encoder_hidden: vec![64],
            encoder_output: PROJECTION_INPUT,
            projection_hidden: 128,
            projection_output: PROJECTION_OUTPUT,
            dropout: 0.1,
            metric: DistanceMetric::CosineDistance,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    fn stage_at(&self, epoch: usize) -> Stage {
        let mut start = 0;
        for stage in &self.stages {
            if epoch < start + stage.epochs {
                return stage.clone();
            }
            start += stage.epochs;
        }
        self.stages.last().cloned().unwrap_or(Stage {
            name: "heads".into(),
            epochs: 0,
            trainable: Trainable::Heads,
            lr_scale: 1.0,
        })
    }

    fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch_size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("learning_rate must be > 0 and momentum in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Encoder, projection head and the loss heads, i.e. everything a
/// checkpoint holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricModel {
    pub encoder: Encoder,
    pub projection: ProjectionHead,
    pub arcface: ArcFaceHead,
    pub centers: ClassCenters,
    pub classes: Vec<String>,
}

impl MetricModel {
    /// Inference-mode embedding of raw feature rows.
    pub fn embed(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.projection.forward(&self.encoder.forward(features)?, None)
    }

    /// Replaces each record's vector by its embedding, keeping identity,
    /// labels, split tags and metadata.
    pub fn embed_records(&self, records: &[EmbeddingRecord]) -> Result<Vec<EmbeddingRecord>> {
        let out = self.embed(&features_of(records)?)?;
        Ok(records
            .iter()
            .zip(out.axis_iter(Axis(0)))
            .map(|(r, row)| EmbeddingRecord {
                vector: row.iter().map(|&x| x as f32).collect(),
                ..r.clone()
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub silhouette: f64,
    pub dbi: f64,
    pub intra_class_mean: f64,
    pub inter_class_mean: f64,
}

impl From<&LabeledMetrics> for EvalMetrics {
    fn from(m: &LabeledMetrics) -> Self {
        Self {
            silhouette: m.silhouette_mean,
            dbi: m.dbi,
            intra_class_mean: m.intra_class_mean,
            inter_class_mean: m.inter_class_mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: String,
    pub learning_rate: f64,
    pub loss_total: f64,
    pub loss_arcface: f64,
    pub loss_supcon: f64,
    pub loss_center: f64,
    pub val_silhouette: f64,
    pub val_dbi: f64,
    /// Batches in which some SupCon anchor had no positive.
    pub batches_without_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Best checkpoint (epoch 0 is the initialization).
    pub model: MetricModel,
    pub best_epoch: usize,
    pub initial: EvalMetrics,
    pub history: Vec<EpochRecord>,
}

pub(crate) fn features_of(records: &[EmbeddingRecord]) -> Result<Array2<f64>> {
    let dim = crate::embedding::uniform_dimension(records)?;
    let mut m = Array2::zeros((records.len(), dim));
    for (mut row, r) in m.axis_iter_mut(Axis(0)).zip(records) {
        for (d, &s) in row.iter_mut().zip(&r.vector) {
            *d = s as f64;
        }
    }
    Ok(m)
}

struct LabeledSplit {
    features: Array2<f64>,
    labels: Vec<usize>,
}

fn split_of(records: &[EmbeddingRecord], tag: SplitTag, classes: &BTreeMap<&str, usize>) -> Result<Option<LabeledSplit>> {
    let members: Vec<&EmbeddingRecord> = records.iter().filter(|r| r.split_tag == Some(tag)).collect();
    if members.is_empty() {
        return Ok(None);
    }
    let mut labels = Vec::with_capacity(members.len());
    for r in &members {
        let name = r.layout_label.as_deref().ok_or_else(|| {
            Error::InvalidArgument(format!("record `{}` has no layout label", r.sample_id))
        })?;
        let idx = classes.get(name).ok_or_else(|| {
            Error::InvalidArgument(format!("class `{name}` of `{}` is absent from the train split", r.sample_id))
        })?;
        labels.push(*idx);
    }
    let owned: Vec<EmbeddingRecord> = members.into_iter().cloned().collect();
    Ok(Some(LabeledSplit {
        features: features_of(&owned)?,
        labels,
    }))
}

fn unit_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let n = row.dot(&row).sqrt().max(ZERO_NORM);
        row.mapv_inplace(|x| x / n);
    }
    out
}

fn evaluate_split(model: &MetricModel, split: &LabeledSplit, metric: DistanceMetric) -> Result<LabeledMetrics> {
    let emb = model.embed(&split.features)?;
    let working = match metric {
        DistanceMetric::CosineDistance => unit_rows(&emb),
        DistanceMetric::Euclidean => emb,
    };
    metrics_for_matrix(&working, &split.labels, &model.classes, metric)
}

/// Clustering-quality metrics of the model's embeddings of a labeled set.
pub fn evaluate(model: &MetricModel, records: &[EmbeddingRecord], metric: DistanceMetric) -> Result<LabeledMetrics> {
    let lookup: BTreeMap<&str, usize> = model.classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        let name = r.layout_label.as_deref().ok_or_else(|| {
            Error::InvalidArgument(format!("record `{}` has no layout label", r.sample_id))
        })?;
        labels.push(*lookup.get(name).ok_or_else(|| Error::InvalidArgument(format!("unknown class `{name}`")))?);
    }
    evaluate_split(
        model,
        &LabeledSplit {
            features: features_of(records)?,
            labels,
        },
        metric,
    )
}

struct Velocity {
    encoder: Vec<(Array2<f64>, ndarray::Array1<f64>)>,
    proj_hidden: (Array2<f64>, ndarray::Array1<f64>),
    proj_gamma: ndarray::Array1<f64>,
    proj_beta: ndarray::Array1<f64>,
    proj_output: (Array2<f64>, ndarray::Array1<f64>),
    arcface: Array2<f64>,
}

impl Velocity {
    fn zeros(model: &MetricModel) -> Self {
        let dense = |d: &super::nn::Dense| (Array2::zeros(d.weight.raw_dim()), ndarray::Array1::zeros(d.bias.len()));
        Self {
            encoder: model.encoder.layers.iter().map(dense).collect(),
            proj_hidden: dense(&model.projection.hidden),
            proj_gamma: ndarray::Array1::zeros(model.projection.norm.gamma.len()),
            proj_beta: ndarray::Array1::zeros(model.projection.norm.beta.len()),
            proj_output: dense(&model.projection.output),
            arcface: Array2::zeros(model.arcface.weights.raw_dim()),
        }
    }
}

fn better(a: &EvalMetrics, b: &EvalMetrics) -> bool {
    // strict improvement only, so earlier epochs win exact ties
    a.silhouette > b.silhouette || (a.silhouette == b.silhouette && a.dbi < b.dbi)
}

pub fn train_metric_head(records: &[EmbeddingRecord], config: &TrainConfig) -> Result<TrainReport> {
    train_metric_head_with(records, config, &JobControl::new())
}

pub fn train_metric_head_with(
    records: &[EmbeddingRecord],
    config: &TrainConfig,
    control: &JobControl,
) -> Result<TrainReport> {
    config.validate()?;
    let train_names: Vec<&str> = records
        .iter()
        .filter(|r| r.split_tag == Some(SplitTag::Train))
        .map(|r| {
            r.layout_label.as_deref().ok_or_else(|| {
                Error::InvalidArgument(format!("record `{}` has no layout label", r.sample_id))
            })
        })
        .collect::<Result<_>>()?;
    let (_, class_names) = index_labels(&train_names);
    let lookup: BTreeMap<&str, usize> = class_names.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let train = split_of(records, SplitTag::Train, &lookup)?.ok_or(Error::EmptySplit("train"))?;
    let val = split_of(records, SplitTag::Val, &lookup)?.ok_or(Error::EmptySplit("val"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let encoder = Encoder::init(train.features.ncols(), &config.encoder_hidden, config.encoder_output, &mut rng);
    let projection = ProjectionHead::with_dims(
        config.encoder_output,
        config.projection_hidden,
        config.projection_output,
        config.dropout,
        &mut rng,
    )?;
    let arc_init = Array2::from_shape_simple_fn((class_names.len(), config.projection_output), || {
        rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng)
    });
    let arcface = ArcFaceHead::new(arc_init, config.scale, config.margin)?;

    // centers start at the class means of the initial embeddings
    let init_emb = projection.forward(&encoder.forward(&train.features)?, None)?;
    let centers = ClassCenters::new(
        crate::cluster::metrics::class_centroids(&init_emb, &train.labels, class_names.len()),
        config.center_lr,
    )?;
    let mut model = MetricModel {
        encoder,
        projection,
        arcface,
        centers,
        classes: class_names,
    };
    let supcon = SupConConfig {
        temperature: config.temperature,
    };

    let initial = EvalMetrics::from(&evaluate_split(&model, &val, config.metric)?);
    let mut best = (model.clone(), 0usize, initial.clone());
    let mut history = Vec::with_capacity(config.epochs);
    let mut velocity = Velocity::zeros(&model);
    let mut order: Vec<usize> = (0..train.labels.len()).collect();
    let mut step: u64 = 0;
    let layer_count = model.encoder.layers.len();

    for epoch in 1..=config.epochs {
        control.check()?;
        let stage = config.stage_at(epoch - 1);
        let lr = config.learning_rate * stage.lr_scale;
        let encoder_trainable = match stage.trainable {
            Trainable::Heads => 0,
            Trainable::TopEncoderLayers(k) => k.min(layer_count),
            Trainable::All => layer_count,
        };
        order.shuffle(&mut rng);

        let mut sums = [0.0f64; 4];
        let mut batches = 0usize;
        let mut without_positives = 0usize;
        for (batch_no, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let x = train.features.select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let (feats, enc_cache) = model.encoder.forward_train(&x)?;
            let key = DropoutKey {
                seed: config.rng_seed,
                step,
                layer: 0,
            };
            step += 1;
            let (emb, proj_cache) = model.projection.forward_train(&feats, key)?;
            let batch = Batch::new(emb, labels)?;
            let (bundle, parts) = composite_parts(&batch, &model.arcface, &supcon, &model.centers, &config.weights)?;
            if !bundle.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step: batch_no,
                    detail: format!(
                        "arcface={} supcon={} center={} total={}",
                        parts.arcface, parts.supcon, parts.center, bundle.value
                    ),
                });
            }
            sums[0] += bundle.value;
            sums[1] += parts.arcface;
            sums[2] += parts.supcon;
            sums[3] += parts.center;
            batches += 1;
            without_positives += bundle.warn_no_positives as usize;

            let pg = model.projection.backward(&proj_cache, &bundle.grad_embeddings);
            if encoder_trainable > 0 {
                let eg = model.encoder.backward(&enc_cache, &pg.input, encoder_trainable);
                for ((layer, g), v) in model.encoder.layers.iter_mut().zip(eg).zip(velocity.encoder.iter_mut()) {
                    if let Some(g) = g {
                        sgd_step(&mut layer.weight, &g.weight, &mut v.0, lr, config.momentum);
                        sgd_step(&mut layer.bias, &g.bias, &mut v.1, lr, config.momentum);
                    }
                }
            }
            let p = &mut model.projection;
            sgd_step(&mut p.hidden.weight, &pg.hidden.weight, &mut velocity.proj_hidden.0, lr, config.momentum);
            sgd_step(&mut p.hidden.bias, &pg.hidden.bias, &mut velocity.proj_hidden.1, lr, config.momentum);
            sgd_step(&mut p.norm.gamma, &pg.gamma, &mut velocity.proj_gamma, lr, config.momentum);
            sgd_step(&mut p.norm.beta, &pg.beta, &mut velocity.proj_beta, lr, config.momentum);
            sgd_step(&mut p.output.weight, &pg.output.weight, &mut velocity.proj_output.0, lr, config.momentum);
            sgd_step(&mut p.output.bias, &pg.output.bias, &mut velocity.proj_output.1, lr, config.momentum);
            if let Some(gw) = &bundle.grad_arcface {
                sgd_step(&mut model.arcface.weights, gw, &mut velocity.arcface, lr, config.momentum);
                model.arcface.renormalize()?;
            }
            if config.weights.center > 0.0 {
                model.centers = update_centers(&batch, &model.centers)?;
            }
        }
        let denom = batches.max(1) as f64;
        let metrics = EvalMetrics::from(&evaluate_split(&model, &val, config.metric)?);
        history.push(EpochRecord {
            epoch,
            stage: stage.name.clone(),
            learning_rate: lr,
            loss_total: sums[0] / denom,
            loss_arcface: sums[1] / denom,
            loss_supcon: sums[2] / denom,
            loss_center: sums[3] / denom,
            val_silhouette: metrics.silhouette,
            val_dbi: metrics.dbi,
            batches_without_positives: without_positives,
        });
        if better(&metrics, &best.2) {
            best = (model.clone(), epoch, metrics);
        }
        control.set_progress(epoch as f64 / config.epochs as f64);
    }

    Ok(TrainReport {
        model: best.0,
        best_epoch: best.1,
        initial,
        history,
    })
}
