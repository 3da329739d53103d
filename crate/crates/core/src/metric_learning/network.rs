//! Projection head (1024 -> H -> 512) and the small dense encoder stand-in
//! that feeds it during desk-scale training.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{relu, relu_backward, BatchNorm, BatchNormCache, Dense, DenseGrad, DropoutKey};
use crate::error::{Error, Result};

pub const PROJECTION_INPUT: usize = 1024;
pub const PROJECTION_OUTPUT: usize = 512;

/// `dense(1024 -> H) -> batch-norm -> ReLU -> dropout -> dense(H -> 512)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub hidden: Dense,
    pub norm: BatchNorm,
    pub output: Dense,
    pub dropout: f64,
}

pub(crate) struct ProjectionCache {
    input: Array2<f64>,
    norm: BatchNormCache,
    pre_relu: Array2<f64>,
    mask: Array2<f64>,
    post_dropout: Array2<f64>,
}

pub(crate) struct ProjectionGrad {
    pub input: Array2<f64>,
    pub hidden: DenseGrad,
    pub gamma: ndarray::Array1<f64>,
    pub beta: ndarray::Array1<f64>,
    pub output: DenseGrad,
}

impl ProjectionHead {
    pub fn init<R: Rng>(hidden: usize, dropout: f64, rng: &mut R) -> Result<Self> {
        Self::with_dims(PROJECTION_INPUT, hidden, PROJECTION_OUTPUT, dropout, rng)
    }

    /// Arbitrary widths, for tests and small experiments.
    pub fn with_dims<R: Rng>(
        input: usize,
        hidden: usize,
        output: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!("dropout must be in [0, 1), got {dropout}")));
        }
        if input == 0 || hidden == 0 || output == 0 {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        Ok(Self {
            hidden: Dense::init(input, hidden, rng),
            norm: BatchNorm::new(hidden),
            output: Dense::init(hidden, output, rng),
            dropout,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.output.outputs()
    }

    /// `training = None` runs inference: no dropout, running batch-norm
    /// statistics, fully deterministic. `Some(key)` uses batch statistics and
    /// the dropout mask addressed by `key`; running statistics are not touched.
    pub fn forward(&self, features: &Array2<f64>, training: Option<DropoutKey>) -> Result<Array2<f64>> {
        let h = self.hidden.forward(features)?;
        match training {
            None => {
                let r = relu(&self.norm.forward_eval(&h));
                self.output.forward(&r)
            }
            Some(key) => {
                let (b, _, _, _) = self.norm.forward_batch(&h);
                let r = relu(&b) * &key.mask(b.nrows(), b.ncols(), self.dropout);
                self.output.forward(&r)
            }
        }
    }

    pub(crate) fn forward_train(
        &mut self,
        features: &Array2<f64>,
        key: DropoutKey,
    ) -> Result<(Array2<f64>, ProjectionCache)> {
        let h = self.hidden.forward(features)?;
        let (b, norm) = self.norm.forward_train(&h);
        let mask = key.mask(b.nrows(), b.ncols(), self.dropout);
        let post_dropout = relu(&b) * &mask;
        let out = self.output.forward(&post_dropout)?;
        Ok((
            out,
            ProjectionCache {
                input: features.clone(),
                norm,
                pre_relu: b,
                mask,
                post_dropout,
            },
        ))
    }

    pub(crate) fn backward(&self, cache: &ProjectionCache, grad_out: &Array2<f64>) -> ProjectionGrad {
        let output = self.output.backward(&cache.post_dropout, grad_out);
        let g_relu = &output.input * &cache.mask;
        let g_norm_out = relu_backward(&cache.pre_relu, &g_relu);
        let bn = self.norm.backward(&cache.norm, &g_norm_out);
        let hidden = self.hidden.backward(&cache.input, &bn.input);
        ProjectionGrad {
            input: hidden.input.clone(),
            hidden,
            gamma: bn.gamma,
            beta: bn.beta,
            output,
        }
    }
}

/// Stand-in for the pretrained encoder: a stack of dense layers with ReLU
/// between them and a linear top layer producing the "CLS token" features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub layers: Vec<Dense>,
}

pub(crate) struct EncoderCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each non-top layer.
    pre: Vec<Array2<f64>>,
}

impl Encoder {
    pub fn init<R: Rng>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers = widths.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut h = x.clone();
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = relu(&h);
            }
        }
        Ok(h)
    }

    pub(crate) fn forward_train(&self, x: &Array2<f64>) -> Result<(Array2<f64>, EncoderCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(h);
            let z = layer.forward(inputs.last().expect("just pushed"))?;
            h = if i < last {
                let a = relu(&z);
                pre.push(z);
                a
            } else {
                z
            };
        }
        Ok((h, EncoderCache { inputs, pre }))
    }

    /// Gradients for the top `trainable` layers (index-aligned with
    /// `self.layers`, `None` for frozen ones). Backprop stops at the lowest
    /// trainable layer.
    pub(crate) fn backward(
        &self,
        cache: &EncoderCache,
        grad_out: &Array2<f64>,
        trainable: usize,
    ) -> Vec<Option<DenseGrad>> {
        let n = self.layers.len();
        let mut grads: Vec<Option<DenseGrad>> = (0..n).map(|_| None).collect();
        let lowest = n.saturating_sub(trainable);
        let mut g = grad_out.clone();
        for i in (lowest..n).rev() {
            if i < n - 1 {
                g = relu_backward(&cache.pre[i], &g);
            }
            let lg = self.layers[i].backward(&cache.inputs[i], &g);
            g = lg.input.clone();
            grads[i] = Some(lg);
        }
        grads
    }
}
