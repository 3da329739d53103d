//! Minimal dense-network layers with explicit backward passes.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in x out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

pub struct DenseGrad {
    pub input: Array2<f64>,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    /// He-normal initialization, zero bias.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let std = (2.0 / inputs as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let weight = Array2::from_shape_simple_fn((inputs, outputs), || normal.sample(rng));
        Self {
            weight,
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.inputs() {
            return Err(Error::ShapeMismatch(format!(
                "dense layer expects width {}, got {}",
                self.inputs(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.weight) + &self.bias)
    }

    pub fn backward(&self, x: &Array2<f64>, grad_out: &Array2<f64>) -> DenseGrad {
        DenseGrad {
            input: grad_out.dot(&self.weight.t()),
            weight: x.t().dot(grad_out),
            bias: grad_out.sum_axis(Axis(0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

pub struct BatchNormCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
}

pub struct BatchNormGrad {
    pub input: Array2<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        (x - &self.running_mean) * &(inv_std * &self.gamma) + &self.beta
    }

    /// Batch-statistics forward. Running statistics are left untouched.
    pub fn forward_batch(&self, x: &Array2<f64>) -> (Array2<f64>, BatchNormCache, Array1<f64>, Array1<f64>) {
        let n = x.nrows() as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let x_hat = centered * &inv_std;
        let y = &x_hat * &self.gamma + &self.beta;
        (y, BatchNormCache { x_hat, inv_std }, mean, var)
    }

    /// Training forward: batch statistics, running statistics updated.
    pub fn forward_train(&mut self, x: &Array2<f64>) -> (Array2<f64>, BatchNormCache) {
        let (y, cache, mean, var) = self.forward_batch(x);
        let n = x.nrows() as f64;
        let unbiased = if n > 1.0 { &var * (n / (n - 1.0)) } else { var };
        let m = self.momentum;
        self.running_mean = &self.running_mean * (1.0 - m) + &(mean * m);
        self.running_var = &self.running_var * (1.0 - m) + &(unbiased * m);
        (y, cache)
    }

    pub fn backward(&self, cache: &BatchNormCache, grad_out: &Array2<f64>) -> BatchNormGrad {
        let n = grad_out.nrows() as f64;
        let g_beta = grad_out.sum_axis(Axis(0));
        let g_gamma = (grad_out * &cache.x_hat).sum_axis(Axis(0));
        let g_xhat = grad_out * &self.gamma;
        let mean_g = g_xhat.sum_axis(Axis(0)) / n;
        let mean_gx = (&g_xhat * &cache.x_hat).sum_axis(Axis(0)) / n;
        let input = (&g_xhat - &mean_g - &(&cache.x_hat * &mean_gx)) * &cache.inv_std;
        BatchNormGrad {
            input,
            gamma: g_gamma,
            beta: g_beta,
        }
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through ReLU given the pre-activation input.
pub fn relu_backward(pre: &Array2<f64>, grad_out: &Array2<f64>) -> Array2<f64> {
    let mut g = grad_out.clone();
    ndarray::Zip::from(&mut g).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    g
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Addresses one dropout draw stream: a mask for `(seed, step, layer)` is a
/// pure function of the key, so replays are bit-identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub step: u64,
    pub layer: u64,
}

impl DropoutKey {
    fn uniform(&self, index: u64) -> f64 {
        let h = splitmix64(
            splitmix64(splitmix64(self.seed ^ 0x5851_f42d_4c95_7f2d).wrapping_add(self.step))
                .wrapping_add(self.layer.wrapping_mul(0x2545_f491_4f6c_dd1d))
                ^ index,
        );
        (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Inverted-dropout mask: kept entries are `1 / (1 - rate)`, dropped are 0.
    pub fn mask(&self, rows: usize, cols: usize, rate: f64) -> Array2<f64> {
        if rate <= 0.0 {
            return Array2::ones((rows, cols));
        }
        let keep = 1.0 / (1.0 - rate);
        Array2::from_shape_fn((rows, cols), |(i, j)| {
            if self.uniform((i * cols + j) as u64) < rate {
                0.0
            } else {
                keep
            }
        })
    }
}

/// Plain SGD with optional heavy-ball momentum on one tensor.
pub fn sgd_step<D: ndarray::Dimension>(
    param: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    velocity: &mut ndarray::Array<f64, D>,
    lr: f64,
    momentum: f64,
) {
    if momentum > 0.0 {
        velocity.zip_mut_with(grad, |v, &g| *v = momentum * *v + g);
        param.scaled_add(-lr, velocity);
    } else {
        param.scaled_add(-lr, grad);
    }
}
