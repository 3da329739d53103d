//! Seeded synthetic embedding sets with a ground-truth side file.
//!
//! Geometry on the unit sphere in `D` dimensions:
//!
//! - Layout centers are `normalize(sqrt(1 - s) * u + sqrt(s) * e_l)` for a
//!   shared direction `u` and orthonormal layout directions `e_l`, so every
//!   pair of centers sits at cosine distance exactly `s` (the separation).
//! - Layout samples are `normalize(center + sigma * g)` with
//!   `g ~ N(0, I / D)`, so the noise vector has norm close to 1.
//! - A fraud family is anchored on one layout and pushed off the layout
//!   manifold along its own orthonormal direction `f`: the family center is
//!   `normalize(anchor + offset_scale * f)`, members add `template_jitter`
//!   noise the same way layout samples add `sigma`.
//! - An outlier belongs to a layout but adds an extra displacement of
//!   `magnitude * sigma` along a random unit direction.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::embedding::{EmbeddingRecord, SplitTag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub size: usize,
    pub offset_scale: f64,
    pub template_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierSpec {
    pub count: usize,
    /// Extra displacement in units of `sigma_within`.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dataset_id: String,
    pub n_layouts: usize,
    /// Inclusive range of samples drawn per layout.
    pub samples_per_layout: (usize, usize),
    pub dim: usize,
    pub sigma_within: f64,
    /// Cosine distance between any two layout centers, in `(0, 1]`.
    pub separation: f64,
    #[serde(default)]
    pub fraud_families: Vec<FamilySpec>,
    #[serde(default)]
    pub outliers: Option<OutlierSpec>,
    pub rng_seed: u64,
    /// Attach layout labels to layout samples (families stay unlabeled).
    #[serde(default)]
    pub with_labels: bool,
    /// Per-layout `(train, val)` fractions; the rest becomes test.
    #[serde(default)]
    pub splits: Option<(f64, f64)>,
}

impl SyntheticSpec {
    pub fn new(n_layouts: usize, samples_per_layout: usize, dim: usize, rng_seed: u64) -> Self {
        Self {
            dataset_id: "synthetic".into(),
            n_layouts,
            samples_per_layout: (samples_per_layout, samples_per_layout),
            dim,
            sigma_within: 0.2,
            separation: 0.5,
            fraud_families: Vec::new(),
            outliers: None,
            rng_seed,
            with_labels: false,
            splits: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleSpec(m));
        if self.n_layouts == 0 || self.dim == 0 {
            return bad("n_layouts and dim must be positive".into());
        }
        let (lo, hi) = self.samples_per_layout;
        if lo == 0 || lo > hi {
            return bad(format!("samples_per_layout range ({lo}, {hi}) is empty"));
        }
        let needed = 1 + self.n_layouts + self.fraud_families.len();
        if needed > self.dim {
            return bad(format!(
                "{} layouts and {} families need {needed} orthogonal directions, dimension is {}",
                self.n_layouts,
                self.fraud_families.len(),
                self.dim
            ));
        }
        if !(self.separation > 0.0 && self.separation <= 1.0) {
            return bad(format!("separation {} must lie in (0, 1]", self.separation));
        }
        if !(self.sigma_within > 0.0 && self.sigma_within.is_finite()) {
            return bad("sigma_within must be positive".into());
        }
        for (i, f) in self.fraud_families.iter().enumerate() {
            if f.size == 0 || !(f.offset_scale > 0.0) || !(f.template_jitter >= 0.0) {
                return bad(format!("family {i} needs positive size and offset and non-negative jitter"));
            }
        }
        if let Some(o) = &self.outliers {
            if !(o.magnitude > 0.0 && o.magnitude.is_finite()) {
                return bad("outlier magnitude must be positive".into());
            }
        }
        if let Some((tr, va)) = self.splits {
            if !(tr > 0.0 && va >= 0.0 && tr + va < 1.0) {
                return bad("split fractions must satisfy train > 0, val >= 0, train + val < 1".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[serde(default)]
    pub outlier: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub dataset_id: String,
    pub rng_seed: u64,
    /// Family name to the layout it was anchored on.
    pub family_anchors: BTreeMap<String, String>,
    /// Sorted by sample id.
    pub samples: Vec<TruthRow>,
}

impl GroundTruth {
    pub fn family_members(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in &self.samples {
            if let Some(f) = &r.family {
                out.entry(f.clone()).or_default().push(r.sample_id.clone());
            }
        }
        out
    }

    pub fn outliers(&self) -> Vec<String> {
        self.samples
            .iter()
            .filter(|r| r.outlier)
            .map(|r| r.sample_id.clone())
            .collect()
    }

    pub fn layout_of(&self) -> BTreeMap<&str, &str> {
        self.samples
            .iter()
            .filter_map(|r| Some((r.sample_id.as_str(), r.layout.as_deref()?)))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_vec_pretty(self).map_err(|e| Error::io(path, e.into()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            row: e.line(),
            message: e.to_string(),
        })
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// `count` orthonormal directions from Gram-Schmidt on Gaussian draws.
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian(rng, dim);
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

/// `normalize(center + scale * g)` with `g ~ N(0, I / D)`.
fn jittered(rng: &mut ChaCha8Rng, center: &[f64], scale: f64) -> Vec<f64> {
    let dim = center.len();
    let s = scale / (dim as f64).sqrt();
    let mut v: Vec<f64> = center
        .iter()
        .map(|c| c + s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    normalize(&mut v);
    v
}

struct Draft {
    vector: Vec<f64>,
    layout: Option<usize>,
    family: Option<usize>,
    outlier: bool,
}

pub fn layout_name(i: usize) -> String {
    format!("layout-{i:02}")
}

pub fn family_name(i: usize) -> String {
    format!("family-{i}")
}

pub fn synthesize(spec: &SyntheticSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let dim = spec.dim;
    let dirs = orthonormal(&mut rng, 1 + spec.n_layouts + spec.fraud_families.len(), dim);
    let (common, rest) = dirs.split_first().expect("at least one direction");
    let (layout_dirs, family_dirs) = rest.split_at(spec.n_layouts);
    let (a, b) = ((1.0 - spec.separation).sqrt(), spec.separation.sqrt());
    let centers: Vec<Vec<f64>> = layout_dirs
        .iter()
        .map(|e| common.iter().zip(e).map(|(u, x)| a * u + b * x).collect())
        .collect();

    let mut drafts = Vec::new();
    for (l, center) in centers.iter().enumerate() {
        let (lo, hi) = spec.samples_per_layout;
        let n = rng.random_range(lo..=hi);
        for _ in 0..n {
            drafts.push(Draft {
                vector: jittered(&mut rng, center, spec.sigma_within),
                layout: Some(l),
                family: None,
                outlier: false,
            });
        }
    }
    let mut anchors = BTreeMap::new();
    for (f, (fam, dir)) in spec.fraud_families.iter().zip(family_dirs).enumerate() {
        let anchor = rng.random_range(0..spec.n_layouts);
        anchors.insert(family_name(f), layout_name(anchor));
        let mut center: Vec<f64> = centers[anchor]
            .iter()
            .zip(dir)
            .map(|(c, d)| c + fam.offset_scale * d)
            .collect();
        normalize(&mut center);
        for _ in 0..fam.size {
            drafts.push(Draft {
                vector: jittered(&mut rng, &center, fam.template_jitter),
                layout: None,
                family: Some(f),
                outlier: false,
            });
        }
    }
    if let Some(o) = &spec.outliers {
        for _ in 0..o.count {
            let l = rng.random_range(0..spec.n_layouts);
            let mut push = gaussian(&mut rng, dim);
            normalize(&mut push);
            let base: Vec<f64> = centers[l]
                .iter()
                .zip(&push)
                .map(|(c, p)| c + o.magnitude * spec.sigma_within * p)
                .collect();
            drafts.push(Draft {
                vector: jittered(&mut rng, &base, spec.sigma_within),
                layout: Some(l),
                family: None,
                outlier: true,
            });
        }
    }

    // opaque ids: numbering is shuffled so id order carries no signal
    let mut numbers: Vec<usize> = (0..drafts.len()).collect();
    numbers.shuffle(&mut rng);
    let width = drafts.len().to_string().len().max(5);

    let mut split_of: Vec<Option<SplitTag>> = vec![None; drafts.len()];
    if let Some((tr, va)) = spec.splits {
        for l in 0..spec.n_layouts {
            let mut members: Vec<usize> = (0..drafts.len()).filter(|&i| drafts[i].layout == Some(l)).collect();
            members.shuffle(&mut rng);
            let n = members.len();
            let n_train = ((n as f64 * tr).round() as usize).clamp(1.min(n), n);
            let n_val = ((n as f64 * va).round() as usize).min(n - n_train);
            for (k, &i) in members.iter().enumerate() {
                split_of[i] = Some(if k < n_train {
                    SplitTag::Train
                } else if k < n_train + n_val {
                    SplitTag::Val
                } else {
                    SplitTag::Test
                });
            }
        }
    }

    let mut records = Vec::with_capacity(drafts.len());
    let mut truth = Vec::with_capacity(drafts.len());
    for (i, d) in drafts.into_iter().enumerate() {
        let id = format!("s{:0width$}", numbers[i], width = width);
        let mut rec = EmbeddingRecord::new(id.clone(), d.vector.iter().map(|&x| x as f32).collect());
        if spec.with_labels {
            rec.layout_label = d.layout.map(layout_name);
        }
        rec.split_tag = split_of[i];
        records.push(rec);
        truth.push(TruthRow {
            sample_id: id,
            layout: d.layout.map(layout_name),
            family: d.family.map(family_name),
            outlier: d.outlier,
        });
    }
    truth.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let dataset = Dataset::from_records(spec.dataset_id.clone(), records)?
        .with_provenance(format!("synthesized with seed {}", spec.rng_seed));
    Ok((
        dataset,
        GroundTruth {
            dataset_id: spec.dataset_id.clone(),
            rng_seed: spec.rng_seed,
            family_anchors: anchors,
            samples: truth,
        },
    ))
}
