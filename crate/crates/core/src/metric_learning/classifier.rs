//! Lightweight layout classifier over embeddings: `D -> 256 -> C` with ReLU,
//! dropout and a softmax output, trained with cross-entropy on a per-class
//! 80/20 split.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{relu, relu_backward, sgd_step, Dense, DropoutKey};
use super::trainer::features_of;
use crate::embedding::EmbeddingRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutClassifier {
    pub hidden: Dense,
    pub output: Dense,
    pub dropout: f64,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    pub class_index: usize,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub train_fraction: f64,
    /// Classes with fewer samples are excluded before splitting.
    pub min_class_size: usize,
    pub rng_seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 32,
            hidden: 256,
            dropout: 0.2,
            train_fraction: 0.8,
            min_class_size: 5,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub classifier: LayoutClassifier,
    /// Accuracy on the held-out part of the split.
    pub accuracy: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub excluded_classes: Vec<String>,
}

pub(crate) fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    p
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl LayoutClassifier {
    pub fn input_dim(&self) -> usize {
        self.hidden.inputs()
    }

    pub fn probabilities(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let h = relu(&self.hidden.forward(x)?);
        Ok(softmax_rows(&self.output.forward(&h)?))
    }
}

pub fn classify_layout(embedding: &[f64], clf: &LayoutClassifier) -> Result<Classification> {
    if embedding.len() != clf.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "classifier expects dimension {}, got {}",
            clf.input_dim(),
            embedding.len()
        )));
    }
    let x = Array2::from_shape_vec((1, embedding.len()), embedding.to_vec())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let p = clf.probabilities(&x)?;
    let idx = argmax(p.row(0));
    Ok(Classification {
        label: clf.classes[idx].clone(),
        class_index: idx,
        probabilities: p.row(0).to_vec(),
    })
}

struct Split {
    train: Vec<usize>,
    test: Vec<usize>,
    labels: Vec<usize>,
    classes: Vec<String>,
    excluded: Vec<String>,
}

/// Per-class seeded shuffle, then the first `round(n * fraction)` go to train
/// (at least one sample on each side).
fn stratified_split(records: &[EmbeddingRecord], cfg: &ClassifierConfig) -> Result<Split> {
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let label = r.layout_label.as_deref().ok_or_else(|| {
            Error::InvalidArgument(format!("record `{}` has no layout label", r.sample_id))
        })?;
        by_class.entry(label).or_default().push(i);
    }
    let mut excluded = Vec::new();
    by_class.retain(|name, members| {
        let keep = members.len() >= cfg.min_class_size.max(2);
        if !keep {
            excluded.push(name.to_string());
        }
        keep
    });
    if by_class.len() < 2 {
        return Err(Error::TooFewClasses(by_class.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut labels = vec![usize::MAX; records.len()];
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let mut classes = Vec::new();
    for (c, (name, mut members)) in by_class.into_iter().enumerate() {
        classes.push(name.to_string());
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((n as f64 * cfg.train_fraction).round() as usize).clamp(1, n - 1);
        for (j, &i) in members.iter().enumerate() {
            labels[i] = c;
            if j < n_train {
                train.push(i);
            } else {
                test.push(i);
            }
        }
    }
    Ok(Split {
        train,
        test,
        labels,
        classes,
        excluded,
    })
}

pub fn train_layout_classifier(records: &[EmbeddingRecord], cfg: &ClassifierConfig) -> Result<ClassifierReport> {
    if !(0.0..1.0).contains(&cfg.dropout) || !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::InvalidArgument("dropout must be in [0,1) and train_fraction in (0,1)".into()));
    }
    if cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(Error::InvalidArgument("batch_size and hidden must be positive".into()));
    }
    let split = stratified_split(records, cfg)?;
    let x = features_of(records)?;
    let c = split.classes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0xc1a5_51f1);
    let mut clf = LayoutClassifier {
        hidden: Dense::init(x.ncols(), cfg.hidden, &mut rng),
        output: Dense::init(cfg.hidden, c, &mut rng),
        dropout: cfg.dropout,
        classes: split.classes.clone(),
    };
    let mut v_hidden = (Array2::zeros(clf.hidden.weight.raw_dim()), Array1::zeros(cfg.hidden));
    let mut v_output = (Array2::zeros(clf.output.weight.raw_dim()), Array1::zeros(c));
    let mut order = split.train.clone();
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let pre = clf.hidden.forward(&xb)?;
            let mask = DropoutKey {
                seed: cfg.rng_seed,
                step,
                layer: 1,
            }
            .mask(pre.nrows(), pre.ncols(), cfg.dropout);
            step += 1;
            let h = relu(&pre) * &mask;
            let mut g = softmax_rows(&clf.output.forward(&h)?);
            let inv = 1.0 / chunk.len() as f64;
            for (row, &i) in chunk.iter().enumerate() {
                g[[row, split.labels[i]]] -= 1.0;
            }
            g.mapv_inplace(|v| v * inv);
            let go = clf.output.backward(&h, &g);
            let gh = relu_backward(&pre, &(&go.input * &mask));
            let gi = clf.hidden.backward(&xb, &gh);
            sgd_step(&mut clf.output.weight, &go.weight, &mut v_output.0, cfg.learning_rate, cfg.momentum);
            sgd_step(&mut clf.output.bias, &go.bias, &mut v_output.1, cfg.learning_rate, cfg.momentum);
            sgd_step(&mut clf.hidden.weight, &gi.weight, &mut v_hidden.0, cfg.learning_rate, cfg.momentum);
            sgd_step(&mut clf.hidden.bias, &gi.bias, &mut v_hidden.1, cfg.learning_rate, cfg.momentum);
        }
    }

    let xt = x.select(Axis(0), &split.test);
    let p = clf.probabilities(&xt)?;
    let correct = split
        .test
        .iter()
        .enumerate()
        .filter(|&(row, &i)| argmax(p.row(row)) == split.labels[i])
        .count();
    Ok(ClassifierReport {
        classifier: clf,
        accuracy: correct as f64 / split.test.len() as f64,
        train_size: split.train.len(),
        test_size: split.test.len(),
        excluded_classes: split.excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn two_class(seed: u64) -> Vec<EmbeddingRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut out = Vec::new();
        for i in 0..40 {
            let (label, sign) = if i % 2 == 0 { ("left", -1.0) } else { ("right", 1.0) };
            let v = vec![sign + noise.sample(&mut rng) as f32, noise.sample(&mut rng), noise.sample(&mut rng)];
            out.push(EmbeddingRecord::new(format!("r{i}"), v).with_label(label));
        }
        out
    }

    #[test]
    fn separable_two_class_is_perfect() {
        let recs = two_class(1);
        let report = train_layout_classifier(&recs, &ClassifierConfig::default()).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.test_size, 8);
        assert_eq!(report.train_size, 32);
        // a training sample of a well separated class maps back to it
        let c = classify_layout(&recs[0].to_f64(), &report.classifier).unwrap();
        assert_eq!(c.label, "left");
        let sum: f64 = c.probabilities.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(c.probabilities.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn split_is_reproducible() {
        let recs = two_class(2);
        let cfg = ClassifierConfig {
            epochs: 3,
            ..Default::default()
        };
        let a = train_layout_classifier(&recs, &cfg).unwrap();
        let b = train_layout_classifier(&recs, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rare_classes_are_excluded() {
        let mut recs = two_class(3);
        recs.retain(|r| r.layout_label.as_deref() == Some("left"));
        recs.push(EmbeddingRecord::new("rare", vec![0.0, 1.0, 0.0]).with_label("rare"));
        assert!(matches!(
            train_layout_classifier(&recs, &ClassifierConfig::default()),
            Err(Error::TooFewClasses(1))
        ));
    }

    #[test]
    fn uniform_logits_pick_first_class() {
        let clf = LayoutClassifier {
            hidden: Dense {
                weight: Array2::zeros((3, 4)),
                bias: Array1::zeros(4),
            },
            output: Dense {
                weight: Array2::zeros((4, 3)),
                bias: Array1::zeros(3),
            },
            dropout: 0.2,
            classes: vec!["a".into(), "b".into(), "c".into()],
        };
        let c = classify_layout(&[0.3, -1.0, 2.0], &clf).unwrap();
        assert_eq!(c.class_index, 0);
        assert_eq!(c.label, "a");
        assert!(classify_layout(&[1.0], &clf).is_err());
    }
}
