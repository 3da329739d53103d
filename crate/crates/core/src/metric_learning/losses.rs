//! ArcFace, supervised contrastive and center losses with exact analytic
//! gradients, plus their weighted composite.
//!
//! ArcFace and SupCon normalize embeddings internally, so their gradients are
//! taken through the normalization and are orthogonal to each input row.
//! Center loss acts on the raw embeddings.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::embedding::ZERO_NORM;
use crate::error::{Error, Result};

/// Cosines fed to the margin rule are clamped to `[-1 + EPS, 1 - EPS]`.
pub const COS_CLAMP_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub embeddings: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(embeddings: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if embeddings.nrows() == 0 {
            return Err(Error::EmptySet);
        }
        if embeddings.nrows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} embeddings but {} labels",
                embeddings.nrows(),
                labels.len()
            )));
        }
        Ok(Self { embeddings, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcFaceHead {
    /// `C x D`, one unit-norm row per class.
    pub weights: Array2<f64>,
    pub scale: f64,
    pub margin: f64,
}

impl ArcFaceHead {
    pub fn new(weights: Array2<f64>, scale: f64, margin: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be > 0, got {scale}")));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&margin) {
            return Err(Error::InvalidArgument(format!(
                "margin must lie in [0, pi/2), got {margin}"
            )));
        }
        let mut head = Self {
            weights,
            scale,
            margin,
        };
        head.renormalize()?;
        Ok(head)
    }

    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    /// Restores the unit-norm row invariant after a parameter update.
    pub fn renormalize(&mut self) -> Result<()> {
        for mut row in self.weights.axis_iter_mut(Axis(0)) {
            let n = row.dot(&row).sqrt();
            if n < ZERO_NORM {
                return Err(Error::ZeroVector);
            }
            row.mapv_inplace(|x| x / n);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupConConfig {
    pub temperature: f64,
}

impl Default for SupConConfig {
    fn default() -> Self {
        Self { temperature: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCenters {
    /// `K x D`, one row per class.
    pub centers: Array2<f64>,
    /// Center step size, in `(0, 1]`.
    pub lr: f64,
}

impl ClassCenters {
    pub fn new(centers: Array2<f64>, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr <= 1.0) {
            return Err(Error::InvalidArgument(format!("center lr must be in (0, 1], got {lr}")));
        }
        if centers.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite center".into()));
        }
        Ok(Self { centers, lr })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub arcface: f64,
    pub supcon: f64,
    pub center: f64,
}

impl LossWeights {
    pub fn new(arcface: f64, supcon: f64, center: f64) -> Result<Self> {
        let w = Self {
            arcface,
            supcon,
            center,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.arcface, self.supcon, self.center];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("loss weights must be finite and >= 0".into()));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidArgument("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            arcface: 1.0,
            supcon: 1.0,
            center: 0.003,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBundle {
    pub value: f64,
    pub grad_embeddings: Array2<f64>,
    pub grad_arcface: Option<Array2<f64>>,
    pub grad_centers: Option<Array2<f64>>,
    /// Set when at least one SupCon anchor had no positive in the batch.
    pub warn_no_positives: bool,
}

impl LossBundle {
    fn zeros(n: usize, d: usize) -> Self {
        Self {
            value: 0.0,
            grad_embeddings: Array2::zeros((n, d)),
            grad_arcface: None,
            grad_centers: None,
            warn_no_positives: false,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad_embeddings.iter().all(|x| x.is_finite())
            && self.grad_arcface.iter().flatten().all(|x| x.is_finite())
            && self.grad_centers.iter().flatten().all(|x| x.is_finite())
    }
}

/// Unit rows plus the original norms, erroring on zero rows.
fn normalize_rows(m: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut out = m.clone();
    let mut norms = Array1::zeros(m.nrows());
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let n = row.dot(&row).sqrt();
        if n < ZERO_NORM || !n.is_finite() {
            return Err(Error::DegenerateEmbedding { row: i });
        }
        norms[i] = n;
        row.mapv_inplace(|x| x / n);
    }
    Ok((out, norms))
}

/// Pulls a gradient w.r.t. a unit vector `u = x / |x|` back to `x`.
fn back_through_normalize(grad_u: ArrayView1<f64>, u: ArrayView1<f64>, norm: f64) -> Array1<f64> {
    let radial = grad_u.dot(&u);
    (&grad_u - &(&u * radial)) / norm
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Margin-penalized target cosine and its derivative w.r.t. the raw cosine.
///
/// `cos(theta + m)` on the clamped cosine; past `theta = pi - m` the linear
/// fallback `cos(theta) - m sin(m)` keeps the logit monotone in theta.
pub(crate) fn margin_cosine(cos: f64, margin: f64) -> (f64, f64) {
    let lo = -1.0 + COS_CLAMP_EPS;
    let hi = 1.0 - COS_CLAMP_EPS;
    let clamped = cos.clamp(lo, hi);
    let inside = cos > lo && cos < hi;
    let (sin_m, cos_m) = margin.sin_cos();
    let threshold = (std::f64::consts::PI - margin).cos();
    if clamped > threshold {
        let sin_t = (1.0 - clamped * clamped).sqrt();
        let phi = clamped * cos_m - sin_t * sin_m;
        let dphi = if inside { cos_m + clamped / sin_t * sin_m } else { 0.0 };
        (phi, dphi)
    } else {
        (clamped - margin * sin_m, if inside { 1.0 } else { 0.0 })
    }
}

pub fn arcface_loss(batch: &Batch, head: &ArcFaceHead) -> Result<LossBundle> {
    let n = batch.len();
    let d = batch.dim();
    let classes = head.classes();
    if head.weights.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: head.weights.ncols(),
            actual: d,
        });
    }
    if let Some(&label) = batch.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidLabel { label, classes });
    }
    let (u, u_norms) = normalize_rows(&batch.embeddings)?;
    let (w, w_norms) = normalize_rows(&head.weights).map_err(|_| Error::ZeroVector)?;
    let cos = u.dot(&w.t());

    let s = head.scale;
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    // gradient of the mean loss w.r.t. each raw cosine
    let mut g_cos = Array2::<f64>::zeros((n, classes));
    for i in 0..n {
        let y = batch.labels[i];
        let (phi, dphi) = margin_cosine(cos[[i, y]], head.margin);
        let logits: Vec<f64> = (0..classes)
            .map(|j| if j == y { s * phi } else { s * cos[[i, j]] })
            .collect();
        let lse = log_sum_exp(logits.iter().copied());
        value += lse - logits[y];
        for j in 0..classes {
            let p = (logits[j] - lse).exp();
            let g_logit = (p - if j == y { 1.0 } else { 0.0 }) * inv_n;
            g_cos[[i, j]] = g_logit * s * if j == y { dphi } else { 1.0 };
        }
    }
    value *= inv_n;

    let g_u = g_cos.dot(&w);
    let g_w = g_cos.t().dot(&u);
    let mut grad_embeddings = Array2::zeros((n, d));
    for i in 0..n {
        let g = back_through_normalize(g_u.row(i), u.row(i), u_norms[i]);
        grad_embeddings.row_mut(i).assign(&g);
    }
    let mut grad_w = Array2::zeros((classes, d));
    for j in 0..classes {
        let g = back_through_normalize(g_w.row(j), w.row(j), w_norms[j]);
        grad_w.row_mut(j).assign(&g);
    }
    Ok(LossBundle {
        value,
        grad_embeddings,
        grad_arcface: Some(grad_w),
        grad_centers: None,
        warn_no_positives: false,
    })
}

/// Supervised contrastive loss, averaged over anchors that have at least one
/// positive. Anchors without positives contribute nothing and raise
/// `warn_no_positives`.
pub fn supcon_loss(batch: &Batch, cfg: &SupConConfig) -> Result<LossBundle> {
    let n = batch.len();
    let d = batch.dim();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    if !(cfg.temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be > 0, got {}",
            cfg.temperature
        )));
    }
    let (u, u_norms) = normalize_rows(&batch.embeddings)?;
    let tau = cfg.temperature;
    let sim = u.dot(&u.t()).mapv(|x| x / tau);

    let anchors: Vec<usize> = (0..n)
        .filter(|&i| (0..n).any(|j| j != i && batch.labels[j] == batch.labels[i]))
        .collect();
    let mut out = LossBundle::zeros(n, d);
    out.warn_no_positives = anchors.len() < n;
    if anchors.is_empty() {
        return Ok(out);
    }
    let inv_a = 1.0 / anchors.len() as f64;

    // gradient w.r.t. the scaled similarity matrix
    let mut g_sim = Array2::<f64>::zeros((n, n));
    let mut value = 0.0;
    for &i in &anchors {
        let others = (0..n).filter(|&a| a != i);
        let lse = log_sum_exp(others.clone().map(|a| sim[[i, a]]));
        let positives: Vec<usize> = (0..n)
            .filter(|&p| p != i && batch.labels[p] == batch.labels[i])
            .collect();
        let inv_p = 1.0 / positives.len() as f64;
        let mut li = 0.0;
        for &p in &positives {
            li -= sim[[i, p]] - lse;
        }
        value += li * inv_p;
        for a in others {
            g_sim[[i, a]] += (sim[[i, a]] - lse).exp() * inv_a;
        }
        for &p in &positives {
            g_sim[[i, p]] -= inv_p * inv_a;
        }
    }
    out.value = value * inv_a;

    // sim[i][j] = u_i . u_j / tau contributes to both rows
    let g_sym = (&g_sim + &g_sim.t()).mapv(|x| x / tau);
    let g_u = g_sym.dot(&u);
    for i in 0..n {
        let g = back_through_normalize(g_u.row(i), u.row(i), u_norms[i]);
        out.grad_embeddings.row_mut(i).assign(&g);
    }
    Ok(out)
}

fn check_centers(batch: &Batch, centers: &ClassCenters) -> Result<()> {
    if centers.centers.ncols() != batch.dim() {
        return Err(Error::DimensionMismatch {
            expected: centers.centers.ncols(),
            actual: batch.dim(),
        });
    }
    let k = centers.centers.nrows();
    if let Some(&label) = batch.labels.iter().find(|&&l| l >= k) {
        return Err(Error::UnknownClass { label, centers: k });
    }
    Ok(())
}

/// `1/2 * sum_i |z_i - c_{y_i}|^2`. Centers are not modified.
pub fn center_loss(batch: &Batch, centers: &ClassCenters) -> Result<LossBundle> {
    check_centers(batch, centers)?;
    let n = batch.len();
    let d = batch.dim();
    let mut grad_embeddings = Array2::zeros((n, d));
    let mut grad_centers = Array2::zeros(centers.centers.raw_dim());
    let mut value = 0.0;
    for (i, &y) in batch.labels.iter().enumerate() {
        let diff = &batch.embeddings.row(i) - &centers.centers.row(y);
        value += 0.5 * diff.dot(&diff);
        grad_embeddings.row_mut(i).assign(&diff);
        let mut gc = grad_centers.row_mut(y);
        gc -= &diff;
    }
    Ok(LossBundle {
        value,
        grad_embeddings,
        grad_arcface: None,
        grad_centers: Some(grad_centers),
        warn_no_positives: false,
    })
}

/// Mini-batch center update:
/// `c_k <- c_k - lr * sum_{i: y_i = k} (c_k - z_i) / (1 + n_k)`.
pub fn update_centers(batch: &Batch, centers: &ClassCenters) -> Result<ClassCenters> {
    check_centers(batch, centers)?;
    let k = centers.centers.nrows();
    let mut delta = Array2::<f64>::zeros(centers.centers.raw_dim());
    let mut counts = vec![0usize; k];
    for (i, &y) in batch.labels.iter().enumerate() {
        let diff = &centers.centers.row(y) - &batch.embeddings.row(i);
        let mut row = delta.row_mut(y);
        row += &diff;
        counts[y] += 1;
    }
    let mut next = centers.clone();
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let step = centers.lr / (1.0 + count as f64);
        let mut row = next.centers.row_mut(c);
        row.scaled_add(-step, &delta.row(c));
    }
    Ok(next)
}

fn accumulate(acc: &mut Option<Array2<f64>>, weight: f64, grad: Option<Array2<f64>>) {
    if let Some(g) = grad {
        match acc {
            Some(a) => a.scaled_add(weight, &g),
            None => *acc = Some(g * weight),
        }
    }
}

/// Unweighted component values from one composite evaluation (zero for
/// skipped components).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentValues {
    pub arcface: f64,
    pub supcon: f64,
    pub center: f64,
}

/// `w_a * ArcFace + w_s * SupCon + w_c * Center`; zero-weight terms are skipped.
pub fn composite_loss(
    batch: &Batch,
    head: &ArcFaceHead,
    supcon: &SupConConfig,
    centers: &ClassCenters,
    weights: &LossWeights,
) -> Result<LossBundle> {
    composite_parts(batch, head, supcon, centers, weights).map(|(bundle, _)| bundle)
}

/// [`composite_loss`] plus the unweighted component values.
pub fn composite_parts(
    batch: &Batch,
    head: &ArcFaceHead,
    supcon: &SupConConfig,
    centers: &ClassCenters,
    weights: &LossWeights,
) -> Result<(LossBundle, ComponentValues)> {
    weights.validate()?;
    let mut out = LossBundle::zeros(batch.len(), batch.dim());
    let mut values = ComponentValues::default();
    if weights.arcface != 0.0 {
        let part = arcface_loss(batch, head)?;
        values.arcface = part.value;
        merge(&mut out, weights.arcface, part);
    }
    if weights.supcon != 0.0 {
        let part = supcon_loss(batch, supcon)?;
        values.supcon = part.value;
        merge(&mut out, weights.supcon, part);
    }
    if weights.center != 0.0 {
        let part = center_loss(batch, centers)?;
        values.center = part.value;
        merge(&mut out, weights.center, part);
    }
    Ok((out, values))
}

fn merge(out: &mut LossBundle, w: f64, part: LossBundle) {
    out.value += w * part.value;
    out.grad_embeddings.scaled_add(w, &part.grad_embeddings);
    accumulate(&mut out.grad_arcface, w, part.grad_arcface);
    accumulate(&mut out.grad_centers, w, part.grad_centers);
    out.warn_no_positives |= part.warn_no_positives;
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn head(w: Array2<f64>, s: f64, m: f64) -> ArcFaceHead {
        ArcFaceHead::new(w, s, m).unwrap()
    }

    #[test]
    fn arcface_single_class_is_zero() {
        let b = Batch::new(array![[0.3, -1.0, 2.0]], vec![0]).unwrap();
        let h = head(array![[1.0, 0.0, 0.0]], 17.0, 0.0);
        assert!(arcface_loss(&b, &h).unwrap().value.abs() < 1e-15);
    }

    #[test]
    fn arcface_two_class_aligned() {
        // cos_y = 1, cos_other = 0, s = 1, m = 0 -> -ln(e / (e + 1))
        let b = Batch::new(array![[2.0, 0.0]], vec![0]).unwrap();
        let h = head(array![[1.0, 0.0], [0.0, 1.0]], 1.0, 0.0);
        let v = arcface_loss(&b, &h).unwrap().value;
        let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        // cos is clamped to 1 - 1e-7 before the margin rule
        assert!((v - expected).abs() < 1e-6, "{v} vs {expected}");
        assert!((expected - 0.3133).abs() < 5e-5);
        let with_margin = arcface_loss(&b, &head(h.weights.clone(), 1.0, 0.5)).unwrap().value;
        assert!(with_margin > v);
    }

    #[test]
    fn arcface_rejects_bad_input() {
        let h = head(array![[1.0, 0.0], [0.0, 1.0]], 30.0, 0.5);
        let bad_label = Batch::new(array![[1.0, 0.0]], vec![2]).unwrap();
        assert!(matches!(arcface_loss(&bad_label, &h), Err(Error::InvalidLabel { label: 2, .. })));
        let zero = Batch::new(array![[1.0, 0.0], [0.0, 0.0]], vec![0, 1]).unwrap();
        assert!(matches!(arcface_loss(&zero, &h), Err(Error::DegenerateEmbedding { row: 1 })));
        assert!(ArcFaceHead::new(array![[1.0]], 0.0, 0.1).is_err());
        assert!(ArcFaceHead::new(array![[1.0]], 1.0, 1.6).is_err());
    }

    #[test]
    fn margin_fallback_branch() {
        let m = 0.5;
        // theta close to pi: linear fallback
        let (phi, dphi) = margin_cosine(-0.99, m);
        assert!((phi - (-0.99 - m * m.sin())).abs() < 1e-15);
        assert_eq!(dphi, 1.0);
        let (phi, _) = margin_cosine(0.2, m);
        assert!((phi - (0.2f64.acos() + m).cos()).abs() < 1e-12);
    }

    #[test]
    fn supcon_examples() {
        let pair = Batch::new(array![[1.0, 0.2], [0.4, 1.0]], vec![3, 3]).unwrap();
        let out = supcon_loss(&pair, &SupConConfig::default()).unwrap();
        assert!(out.value.abs() < 1e-12);
        assert!(!out.warn_no_positives);

        let unique = Batch::new(array![[1.0, 0.2], [0.4, 1.0], [-1.0, 0.3]], vec![0, 1, 2]).unwrap();
        let out = supcon_loss(&unique, &SupConConfig::default()).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad_embeddings.iter().all(|&g| g == 0.0));
        assert!(out.warn_no_positives);

        let single = Batch::new(array![[1.0, 0.0]], vec![0]).unwrap();
        assert!(matches!(
            supcon_loss(&single, &SupConConfig::default()),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn center_examples() {
        let c = ClassCenters::new(array![[1.0, 1.0], [0.0, -2.0]], 0.5).unwrap();
        let at = Batch::new(array![[1.0, 1.0], [0.0, -2.0]], vec![0, 1]).unwrap();
        assert_eq!(center_loss(&at, &c).unwrap().value, 0.0);

        let one = Batch::new(array![[4.0, 5.0]], vec![0]).unwrap();
        assert!((center_loss(&one, &c).unwrap().value - 12.5).abs() < 1e-12);

        let sym = Batch::new(array![[2.0, 1.0], [0.0, 1.0]], vec![0, 0]).unwrap();
        let out = center_loss(&sym, &c).unwrap();
        let gc = out.grad_centers.unwrap();
        assert!(gc.row(0).iter().all(|x| x.abs() < 1e-15));

        let bad = Batch::new(array![[2.0, 1.0]], vec![5]).unwrap();
        assert!(matches!(center_loss(&bad, &c), Err(Error::UnknownClass { label: 5, .. })));
    }

    #[test]
    fn update_centers_examples() {
        let c = ClassCenters::new(array![[0.0, 0.0], [4.0, 4.0]], 1.0).unwrap();
        let b = Batch::new(array![[2.0, 0.0]], vec![0]).unwrap();
        let next = update_centers(&b, &c).unwrap();
        assert_eq!(next.centers.row(0).to_vec(), vec![1.0, 0.0]);
        assert_eq!(next.centers.row(1).to_vec(), vec![4.0, 4.0]);

        // the recurrence c <- c - a (c - z) / 2 contracts geometrically to z
        let mut c = ClassCenters::new(array![[10.0, -3.0]], 0.5).unwrap();
        let b = Batch::new(array![[1.0, 2.0]], vec![0]).unwrap();
        let mut gap = 9.0f64.hypot(5.0);
        for _ in 0..60 {
            c = update_centers(&b, &c).unwrap();
            let g = (&c.centers.row(0) - &b.embeddings.row(0)).mapv(|x| x * x).sum().sqrt();
            assert!((g - 0.75 * gap).abs() < 1e-9 * gap.max(1.0), "{g} {gap}");
            gap = g;
        }
        assert!(gap < 1e-6);
    }

    #[test]
    fn update_centers_fixed_point() {
        let c = ClassCenters::new(array![[1.0, 1.0], [-1.0, 0.0]], 0.7).unwrap();
        let b = Batch::new(array![[2.0, 1.0], [0.0, 1.0], [-1.0, 0.0]], vec![0, 0, 1]).unwrap();
        let next = update_centers(&b, &c).unwrap();
        for (a, b) in next.centers.iter().zip(c.centers.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn composite_degenerate_weights() {
        let b = Batch::new(array![[1.0, 0.5], [0.2, 1.0], [0.9, 0.1]], vec![0, 1, 0]).unwrap();
        let h = head(array![[1.0, 0.0], [0.0, 1.0]], 30.0, 0.5);
        let c = ClassCenters::new(array![[0.9, 0.3], [0.2, 1.0]], 0.5).unwrap();
        let sc = SupConConfig::default();
        let arc = arcface_loss(&b, &h).unwrap();
        let only = composite_loss(&b, &h, &sc, &c, &LossWeights::new(1.0, 0.0, 0.0).unwrap()).unwrap();
        assert_eq!(only.value, arc.value);
        assert_eq!(only.grad_embeddings, arc.grad_embeddings);
        assert!(only.grad_centers.is_none());

        let at = Batch::new(array![[0.9, 0.3], [0.2, 1.0]], vec![0, 1]).unwrap();
        let zero = composite_loss(&at, &h, &sc, &c, &LossWeights::new(0.0, 0.0, 1.0).unwrap()).unwrap();
        assert_eq!(zero.value, 0.0);

        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0, 0.0).is_err());
    }
}
