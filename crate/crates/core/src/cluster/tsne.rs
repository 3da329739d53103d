//! 2-D t-SNE projection.
//!
//! Inputs are put in the metric's working form, reduced to at most 50
//! principal components, and turned into perplexity-calibrated affinities.
//! Up to [`TsneParams::exact_limit`] points use dense affinities and exact
//! O(N^2) gradients; larger sets use sparse k-NN affinities and a Barnes-Hut
//! quadtree for the repulsive term.
//!
//! During the final tenth of the iterations a step is only accepted if it
//! does not increase the KL divergence; rejected steps are retried with a
//! halved step and no momentum, and the position is kept if none succeeds.

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{working_matrix, DistanceMetric, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::job::JobControl;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub rng_seed: u64,
    /// Barnes-Hut opening angle.
    pub theta: f64,
    /// `None` picks `max(N / exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub pca_dims: usize,
    pub exact_limit: usize,
    pub metric: DistanceMetric,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            rng_seed: 0,
            theta: 0.5,
            learning_rate: None,
            pca_dims: 50,
            exact_limit: 5000,
            metric: DistanceMetric::CosineDistance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TsneMethod {
    Exact,
    BarnesHut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub sample_ids: Vec<String>,
    pub coordinates: Vec<[f64; 2]>,
    pub params: TsneParams,
    pub method: TsneMethod,
    pub kl_divergence: f64,
    /// KL divergence after every iteration of the final tenth.
    pub kl_tail: Vec<f64>,
}

/// Projects the rows of `m` onto their top `dims` principal components.
/// Each component's largest-magnitude loading is made positive.
pub fn pca(m: &Array2<f64>, dims: usize) -> Array2<f64> {
    let (n, d) = m.dim();
    let dims = dims.min(d);
    let mean = m.mean_axis(Axis(0)).expect("non-empty");
    let centered = m - &mean;
    let cov = centered.t().dot(&centered) / (n.max(2) - 1) as f64;
    let eig = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = Array2::<f64>::zeros((d, dims));
    for (k, &col) in order.iter().take(dims).enumerate() {
        let v = eig.eigenvectors.column(col);
        let mut pivot = 0;
        for i in 1..d {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            basis[[i, k]] = sign * v[i];
        }
    }
    centered.dot(&basis)
}

/// Conditional affinities `p_{j|i}` for one row of squared distances, with
/// the Gaussian precision tuned so the row entropy equals `ln(perplexity)`.
/// `d2[self_index]` is ignored.
fn calibrate_row(d2: &[f64], self_index: Option<usize>, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
    let min = d2
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != self_index)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut p = vec![0.0; d2.len()];
    for _ in 0..200 {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for (j, (&v, out)) in d2.iter().zip(p.iter_mut()).enumerate() {
            if Some(j) == self_index {
                *out = 0.0;
                continue;
            }
            let e = (-(v - min) * beta).exp();
            *out = e;
            sum += e;
            weighted += (v - min) * e;
        }
        let entropy = sum.ln() + beta * weighted / sum;
        let diff = entropy - target;
        p.iter_mut().for_each(|x| *x /= sum);
        if diff.abs() < 1e-10 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    p
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dense_affinities(x: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d2: Vec<f64> = (0..n).map(|j| sq_dist(x.row(i), x.row(j))).collect();
            calibrate_row(&d2, Some(i), perplexity)
        })
        .collect();
    let mut p = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            p[[i, j]] = (rows[i][j] + rows[j][i]) / (2.0 * n as f64);
        }
    }
    p
}

/// Symmetric sparse affinities in CSR form.
struct Sparse {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

fn knn(x: &Array2<f64>, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = x.nrows();
    let sq: Vec<f64> = x.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
    let block = 256;
    let starts: Vec<usize> = (0..n).step_by(block).collect();
    starts
        .into_par_iter()
        .flat_map_iter(|start| {
            let end = (start + block).min(n);
            let gram = x.slice(ndarray::s![start..end, ..]).dot(&x.t());
            let sq = &sq;
            (start..end).map(move |i| {
                let row = gram.row(i - start);
                let mut cand: Vec<(usize, f64)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (j, (sq[i] + sq[j] - 2.0 * row[j]).max(0.0)))
                    .collect();
                let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
                if cand.len() > k {
                    cand.select_nth_unstable_by(k - 1, cmp);
                    cand.truncate(k);
                }
                cand.sort_by(cmp);
                cand
            })
        })
        .collect()
}

fn sparse_affinities(x: &Array2<f64>, perplexity: f64) -> Sparse {
    let n = x.nrows();
    let k = ((3.0 * perplexity).floor() as usize).clamp(1, n - 1);
    let neighbors = knn(x, k);
    let cond: Vec<Vec<f64>> = neighbors
        .par_iter()
        .map(|nb| {
            let d2: Vec<f64> = nb.iter().map(|&(_, d)| d).collect();
            calibrate_row(&d2, None, perplexity)
        })
        .collect();
    let mut triplets = Vec::with_capacity(2 * n * k);
    for (i, (nb, p)) in neighbors.iter().zip(&cond).enumerate() {
        for (&(j, _), &v) in nb.iter().zip(p) {
            let v = v / (2.0 * n as f64);
            triplets.push((i, j, v));
            triplets.push((j, i, v));
        }
    }
    triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut indptr = vec![0usize; n + 1];
    let mut indices = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut last = None;
    for (i, j, v) in triplets {
        if last == Some((i, j)) {
            *values.last_mut().expect("previous entry") += v;
        } else {
            indices.push(j);
            values.push(v);
            indptr[i + 1] += 1;
            last = Some((i, j));
        }
    }
    for i in 0..n {
        indptr[i + 1] += indptr[i];
    }
    Sparse {
        indptr,
        indices,
        values,
    }
}

struct QuadNode {
    com: [f64; 2],
    count: usize,
    width: f64,
    /// Children indices, or `None` for a leaf.
    children: Option<[usize; 4]>,
    /// Range into the permuted point order (meaningful for leaves).
    start: usize,
    end: usize,
}

struct QuadTree {
    nodes: Vec<QuadNode>,
    order: Vec<usize>,
}

impl QuadTree {
    fn build(y: &[[f64; 2]]) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in y {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let width = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12) * (1.0 + 1e-9);
        let mut tree = QuadTree {
            nodes: Vec::new(),
            order: (0..y.len()).collect(),
        };
        let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        tree.node(y, 0, y.len(), center, width, 0);
        tree
    }

    fn node(&mut self, y: &[[f64; 2]], start: usize, end: usize, center: [f64; 2], width: f64, depth: usize) -> usize {
        let count = end - start;
        let mut com = [0.0; 2];
        for &i in &self.order[start..end] {
            com[0] += y[i][0];
            com[1] += y[i][1];
        }
        com[0] /= count as f64;
        com[1] /= count as f64;
        let id = self.nodes.len();
        self.nodes.push(QuadNode {
            com,
            count,
            width,
            children: None,
            start,
            end,
        });
        if count <= 1 || depth >= 48 {
            return id;
        }
        let quadrant = |p: &[f64; 2]| (p[0] >= center[0]) as usize + 2 * (p[1] >= center[1]) as usize;
        let slice = &mut self.order[start..end];
        slice.sort_by_key(|&i| quadrant(&y[i]));
        let mut bounds = [start; 5];
        for q in 0..4 {
            bounds[q + 1] = bounds[q] + self.order[start..end].iter().filter(|&&i| quadrant(&y[i]) == q).count();
        }
        let half = width / 2.0;
        let mut children = [0; 4];
        for q in 0..4 {
            let c = [
                center[0] + if q & 1 == 1 { half / 2.0 } else { -half / 2.0 },
                center[1] + if q & 2 == 2 { half / 2.0 } else { -half / 2.0 },
            ];
            children[q] = if bounds[q + 1] > bounds[q] {
                self.node(y, bounds[q], bounds[q + 1], c, half, depth + 1)
            } else {
                usize::MAX
            };
        }
        self.nodes[id].children = Some(children);
        id
    }

    /// Returns `(sum of q, sum of q^2 (y_i - y_j))` over all `j != i`.
    fn repulsion(&self, y: &[[f64; 2]], i: usize, theta: f64) -> (f64, [f64; 2]) {
        let mut z = 0.0;
        let mut f = [0.0; 2];
        let mut stack = vec![0usize];
        let yi = y[i];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            let dx = yi[0] - node.com[0];
            let dy = yi[1] - node.com[1];
            let d2 = dx * dx + dy * dy;
            match node.children {
                Some(children) if d2 == 0.0 || node.width * node.width >= theta * theta * d2 => {
                    stack.extend(children.iter().copied().filter(|&c| c != usize::MAX));
                }
                Some(_) => {
                    let q = 1.0 / (1.0 + d2);
                    let c = node.count as f64;
                    z += c * q;
                    f[0] += c * q * q * dx;
                    f[1] += c * q * q * dy;
                }
                None => {
                    for &j in &self.order[node.start..node.end] {
                        if j == i {
                            continue;
                        }
                        let dx = yi[0] - y[j][0];
                        let dy = yi[1] - y[j][1];
                        let q = 1.0 / (1.0 + dx * dx + dy * dy);
                        z += q;
                        f[0] += q * q * dx;
                        f[1] += q * q * dy;
                    }
                }
            }
        }
        (z, f)
    }
}

enum Affinities {
    Dense(Array2<f64>),
    Sparse(Sparse),
}

struct Objective {
    p: Affinities,
    /// `sum p ln p`, constant across iterations.
    entropy: f64,
    theta: f64,
}

impl Objective {
    fn new(p: Affinities, theta: f64) -> Self {
        let plogp = |v: &f64| if *v > 0.0 { v * v.ln() } else { 0.0 };
        let entropy = match &p {
            Affinities::Dense(m) => m.iter().map(plogp).sum(),
            Affinities::Sparse(s) => s.values.iter().map(plogp).sum(),
        };
        Self { p, entropy, theta }
    }

    /// Gradient of KL at `y` with affinities scaled by `exaggeration`, and
    /// the unexaggerated KL divergence at `y`.
    fn eval(&self, y: &[[f64; 2]], exaggeration: f64) -> (Vec<[f64; 2]>, f64) {
        let n = y.len();
        // per point: (z_i, attraction, repulsion, sum p ln q_unnormalized)
        let rows: Vec<(f64, [f64; 2], [f64; 2], f64)> = match &self.p {
            Affinities::Dense(p) => (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut z = 0.0;
                    let mut att = [0.0; 2];
                    let mut rep = [0.0; 2];
                    let mut plq = 0.0;
                    for j in 0..n {
                        if j == i {
                            continue;
                        }
                        let dx = y[i][0] - y[j][0];
                        let dy = y[i][1] - y[j][1];
                        let q = 1.0 / (1.0 + dx * dx + dy * dy);
                        let pij = p[[i, j]];
                        z += q;
                        att[0] += pij * q * dx;
                        att[1] += pij * q * dy;
                        rep[0] += q * q * dx;
                        rep[1] += q * q * dy;
                        if pij > 0.0 {
                            plq += pij * q.ln();
                        }
                    }
                    (z, att, rep, plq)
                })
                .collect(),
            Affinities::Sparse(s) => {
                let tree = QuadTree::build(y);
                (0..n)
                    .into_par_iter()
                    .map(|i| {
                        let (z, rep) = tree.repulsion(y, i, self.theta);
                        let mut att = [0.0; 2];
                        let mut plq = 0.0;
                        for k in s.indptr[i]..s.indptr[i + 1] {
                            let j = s.indices[k];
                            let pij = s.values[k];
                            let dx = y[i][0] - y[j][0];
                            let dy = y[i][1] - y[j][1];
                            let q = 1.0 / (1.0 + dx * dx + dy * dy);
                            att[0] += pij * q * dx;
                            att[1] += pij * q * dy;
                            plq += pij * q.ln();
                        }
                        (z, att, rep, plq)
                    })
                    .collect()
            }
        };
        let z: f64 = rows.iter().map(|r| r.0).sum();
        let plq: f64 = rows.iter().map(|r| r.3).sum();
        let psum: f64 = match &self.p {
            Affinities::Dense(m) => m.sum(),
            Affinities::Sparse(s) => s.values.iter().sum(),
        };
        let kl = self.entropy - plq + psum * z.ln();
        let grad = rows
            .iter()
            .map(|(_, att, rep, _)| {
                [
                    4.0 * (exaggeration * att[0] - rep[0] / z),
                    4.0 * (exaggeration * att[1] - rep[1] / z),
                ]
            })
            .collect();
        (grad, kl)
    }
}

fn center(y: &mut [[f64; 2]]) {
    let n = y.len() as f64;
    let mx = y.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = y.iter().map(|p| p[1]).sum::<f64>() / n;
    for p in y.iter_mut() {
        p[0] -= mx;
        p[1] -= my;
    }
}

pub fn tsne_project(records: &[EmbeddingRecord], params: &TsneParams) -> Result<ProjectionResult> {
    tsne_project_with(records, params, &JobControl::new())
}

pub fn tsne_project_with(records: &[EmbeddingRecord], params: &TsneParams, control: &JobControl) -> Result<ProjectionResult> {
    let n = records.len();
    if !(params.perplexity > 0.0) || !params.perplexity.is_finite() {
        return Err(Error::InvalidArgument("perplexity must be positive".into()));
    }
    if (n as f64) < 3.0 * params.perplexity {
        return Err(Error::PerplexityTooLarge {
            perplexity: params.perplexity,
            n,
        });
    }
    if params.iterations == 0 || !(params.theta >= 0.0) || !(params.exaggeration > 0.0) {
        return Err(Error::InvalidArgument("iterations, theta and exaggeration must be positive".into()));
    }
    let working = working_matrix(records, params.metric)?;
    let x = if working.ncols() > params.pca_dims {
        pca(&working, params.pca_dims)
    } else {
        working
    };
    control.check()?;
    let method = if n <= params.exact_limit {
        TsneMethod::Exact
    } else {
        TsneMethod::BarnesHut
    };
    let objective = Objective::new(
        match method {
            TsneMethod::Exact => Affinities::Dense(dense_affinities(&x, params.perplexity)),
            TsneMethod::BarnesHut => Affinities::Sparse(sparse_affinities(&x, params.perplexity)),
        },
        params.theta,
    );
    control.check()?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    center(&mut y);
    let lr = params
        .learning_rate
        .unwrap_or_else(|| (n as f64 / params.exaggeration / 4.0).max(50.0));
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let exag_at = |it: usize| if it < params.exaggeration_iters { params.exaggeration } else { 1.0 };
    let (mut grad, mut kl) = objective.eval(&y, exag_at(0));
    let tail_start = params.iterations - params.iterations.div_ceil(10);
    let mut kl_tail = Vec::new();

    for it in 0..params.iterations {
        if it % 16 == 0 {
            control.check()?;
            control.set_progress(it as f64 / params.iterations as f64);
        }
        let momentum = if it < params.exaggeration_iters { 0.5 } else { 0.8 };
        let next_exag = exag_at(it + 1);
        let in_tail = it >= tail_start;
        let mut scale = 1.0;
        let mut mom = momentum;
        let mut accepted = false;
        for _ in 0..12 {
            let mut new_gains = gains.clone();
            let mut new_vel = velocity.clone();
            let mut cand = y.clone();
            for i in 0..n {
                for d in 0..2 {
                    let g = grad[i][d];
                    let gain = &mut new_gains[i][d];
                    *gain = if (g > 0.0) != (velocity[i][d] > 0.0) {
                        *gain + 0.2
                    } else {
                        (*gain * 0.8).max(0.01)
                    };
                    new_vel[i][d] = mom * velocity[i][d] - lr * scale * *gain * g;
                    cand[i][d] += new_vel[i][d];
                }
            }
            center(&mut cand);
            let (g2, kl2) = objective.eval(&cand, next_exag);
            if !in_tail || kl2 <= kl {
                y = cand;
                velocity = new_vel;
                gains = new_gains;
                grad = g2;
                kl = kl2;
                accepted = true;
                break;
            }
            scale *= 0.5;
            mom = 0.0;
        }
        if !accepted {
            velocity.iter_mut().for_each(|v| *v = [0.0; 2]);
            if next_exag != exag_at(it) {
                grad = objective.eval(&y, next_exag).0;
            }
        }
        if in_tail {
            kl_tail.push(kl);
        }
    }
    if y.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::InvalidArgument("t-SNE diverged; lower the learning rate".into()));
    }
    control.set_progress(1.0);
    Ok(ProjectionResult {
        sample_ids: records.iter().map(|r| r.sample_id.clone()).collect(),
        coordinates: y,
        params: params.clone(),
        method,
        kl_divergence: kl,
        kl_tail,
    })
}

/// Records whose vectors are the 2-D projection coordinates, for clustering
/// in the projected space.
pub fn projection_records(p: &ProjectionResult) -> Vec<EmbeddingRecord> {
    p.sample_ids
        .iter()
        .zip(&p.coordinates)
        .map(|(id, c)| EmbeddingRecord::new(id.clone(), vec![c[0] as f32, c[1] as f32]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::kmeans::{kmeans, KMeansConfig};
    use std::collections::BTreeMap;

    fn blobs(n_per: usize, dim: usize, seed: u64) -> (Vec<EmbeddingRecord>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut recs = Vec::new();
        let mut truth = Vec::new();
        for c in 0..3 {
            for j in 0..n_per {
                let v: Vec<f32> = (0..dim)
                    .map(|d| (if d == c { 1.0 } else { 0.0 }) + noise.sample(&mut rng) as f32)
                    .collect();
                recs.push(EmbeddingRecord::new(format!("b{c}-{j}"), v));
                truth.push(c);
            }
        }
        (recs, truth)
    }

    fn small(seed: u64) -> TsneParams {
        TsneParams {
            perplexity: 10.0,
            iterations: 300,
            exaggeration_iters: 100,
            rng_seed: seed,
            ..Default::default()
        }
    }

    #[test]
    fn blobs_survive_projection() {
        let (recs, truth) = blobs(40, 8, 1);
        let p = tsne_project(&recs, &small(3)).unwrap();
        assert_eq!(p.method, TsneMethod::Exact);
        assert!(p.kl_divergence >= 0.0);
        assert!(p.kl_tail.windows(2).all(|w| w[1] <= w[0]));
        let mean = p.coordinates.iter().fold([0.0, 0.0], |a, c| [a[0] + c[0], a[1] + c[1]]);
        assert!(mean[0].abs() < 1e-9 && mean[1].abs() < 1e-9);

        let m = kmeans(
            &projection_records(&p),
            &KMeansConfig::new(3, 0).with_metric(DistanceMetric::Euclidean),
        )
        .unwrap();
        let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (a, &t) in m.assignments.iter().zip(&truth) {
            *table.entry((a.unwrap(), t)).or_default() += 1;
        }
        let mut best: BTreeMap<usize, usize> = BTreeMap::new();
        for (&(c, _), &n) in &table {
            let e = best.entry(c).or_default();
            *e = (*e).max(n);
        }
        let purity = best.values().sum::<usize>() as f64 / truth.len() as f64;
        assert!(purity >= 0.95, "purity {purity}");
    }

    #[test]
    fn seeded_runs_repeat_and_duplicates_coincide() {
        let (mut recs, _) = blobs(15, 4, 2);
        let mut dup = recs[0].clone();
        dup.sample_id = "dup".into();
        recs.push(dup);
        let a = tsne_project(&recs, &small(7)).unwrap();
        let b = tsne_project(&recs, &small(7)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let (p, q) = (a.coordinates[0], *a.coordinates.last().unwrap());
        let spread = a.coordinates.iter().map(|c| c[0].hypot(c[1])).fold(0.0, f64::max);
        assert!((p[0] - q[0]).hypot(p[1] - q[1]) < 0.05 * spread);
    }

    #[test]
    fn barnes_hut_path() {
        let (recs, _) = blobs(40, 6, 5);
        let params = TsneParams {
            exact_limit: 10,
            ..small(1)
        };
        let p = tsne_project(&recs, &params).unwrap();
        assert_eq!(p.method, TsneMethod::BarnesHut);
        assert!(p.kl_tail.windows(2).all(|w| w[1] <= w[0]));
        assert!(p.coordinates.iter().all(|c| c[0].is_finite() && c[1].is_finite()));
    }

    #[test]
    fn perplexity_bound() {
        let (recs, _) = blobs(5, 4, 0);
        assert!(matches!(
            tsne_project(&recs, &TsneParams::default()),
            Err(Error::PerplexityTooLarge { n: 15, .. })
        ));
    }

    #[test]
    fn calibrated_rows_hit_target_entropy() {
        let d2: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin().abs() * 4.0).collect();
        let p = calibrate_row(&d2, Some(3), 12.0);
        assert_eq!(p[3], 0.0);
        let h: f64 = -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
        assert!((h - 12f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        let m = Array2::from_shape_fn((40, 3), |(i, j)| match j {
            0 => i as f64,
            1 => (i % 2) as f64 * 0.01,
            _ => 0.0,
        });
        let p = pca(&m, 1);
        // first component is the centered first column
        for i in 0..40 {
            assert!((p[[i, 0]].abs() - (i as f64 - 19.5).abs()).abs() < 1e-3);
        }
    }
}
