use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    cross_entropy, dropout_mask, elu, elu_grad_from_output, max_pool2, max_pool2_backward,
    softmax, softmax_cross_entropy_grad, BatchNorm, BatchNormCache, Conv2d, Dense,
};
use super::{Family, Modifier, NetworkSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::idx::IMAGE_SIDE;
use crate::tensor::{Scalar, Tensor};

const KERNEL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batch-norm uses batch statistics.
    Train,
    /// Dropout disabled, batch-norm uses running statistics.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Linear<T> {
    Dense(Dense<T>),
    Conv(Conv2d<T>),
}

/// One hidden layer: linear map, ELU, optional modifier, and (for
/// convolutions) the 2×2 max pool that follows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenBlock<T> {
    pub linear: Linear<T>,
    pub batchnorm: Option<BatchNorm<T>>,
    pub dropout: bool,
    /// Spatial side of the input map (convolutional blocks only).
    pub input_side: usize,
}

impl<T: Scalar> HiddenBlock<T> {
    pub fn width(&self) -> usize {
        match &self.linear {
            Linear::Dense(d) => d.outputs(),
            Linear::Conv(c) => c.out_channels(),
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self.linear, Linear::Conv(_))
    }

    /// Spatial side of the (pre-pool) output map; 1 for dense blocks.
    pub fn output_side(&self) -> usize {
        match &self.linear {
            Linear::Dense(_) => 1,
            Linear::Conv(c) => c.output_side(self.input_side),
        }
    }
}

/// Intermediates saved by one hidden block during [`Network::forward`].
#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    /// Dense input rows, the raw map of a direct-path convolution, or
    /// im2col columns (train mode).
    input: Vec<T>,
    /// ELU output (train mode).
    act: Vec<T>,
    bn: Option<BatchNormCache<T>>,
    mask: Option<Vec<T>>,
    /// The block's output before pooling: `(B, N)` dense or `(B, H, W, C)`
    /// conv. This is the layer state that gets quantized.
    pub state: Tensor<T>,
    pool_arg: Option<Vec<u32>>,
}

/// Result of a forward pass.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub batch: usize,
    pub mode: Mode,
    pub blocks: Vec<BlockCache<T>>,
    output_input: Vec<T>,
    /// Classification-layer output fed to softmax.
    pub logits: Vec<T>,
    /// Softmax probabilities, `(B, classes)` row-major.
    pub probs: Vec<T>,
}

impl<T: Scalar> Forward<T> {
    /// Hidden-layer outputs in layer order.
    pub fn hidden_states(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.blocks.iter().map(|b| &b.state)
    }
}

/// Parameter gradients, aligned with [`Network::params`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub tensors: Vec<Tensor<T>>,
}

/// A LeNet-family network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network<T> {
    spec: NetworkSpec,
    blocks: Vec<HiddenBlock<T>>,
    output: Dense<T>,
    dropout_rate: f64,
}

impl<T: Scalar> Network<T> {
    /// Builds a freshly initialized network using default modifier settings.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        Self::build_with(
            spec,
            &TrainConfig {
                seed,
                ..TrainConfig::default()
            },
        )
    }

    /// Builds with dropout rate and batch-norm settings from `config`,
    /// Glorot-uniform weights drawn from `config.seed`, and zero biases.
    pub fn build_with(spec: &NetworkSpec, config: &TrainConfig) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bn = |n: usize| {
            (spec.modifier == Modifier::BatchNorm)
                .then(|| BatchNorm::new(n, config.batchnorm_eps, config.batchnorm_momentum))
        };
        let dropout = spec.modifier == Modifier::Dropout;
        let mut blocks = Vec::with_capacity(spec.layer_sizes.len());
        let last_width = match spec.family {
            Family::LeNet300100 => {
                let mut fan_in = IMAGE_SIDE * IMAGE_SIDE;
                for &n in &spec.layer_sizes {
                    blocks.push(HiddenBlock {
                        linear: Linear::Dense(Dense::glorot(fan_in, n, &mut rng)),
                        batchnorm: bn(n),
                        dropout,
                        input_side: 1,
                    });
                    fan_in = n;
                }
                fan_in
            }
            Family::LeNet5 => {
                let (n1, n2, n3) = (spec.layer_sizes[0], spec.layer_sizes[1], spec.layer_sizes[2]);
                let mut side = IMAGE_SIDE;
                let mut cin = 1;
                for &n in &[n1, n2] {
                    let conv = Conv2d::glorot(KERNEL, cin, n, &mut rng);
                    let out = conv.output_side(side);
                    blocks.push(HiddenBlock {
                        linear: Linear::Conv(conv),
                        batchnorm: bn(n),
                        dropout,
                        input_side: side,
                    });
                    side = out / 2;
                    cin = n;
                }
                blocks.push(HiddenBlock {
                    linear: Linear::Dense(Dense::glorot(side * side * n2, n3, &mut rng)),
                    batchnorm: bn(n3),
                    dropout,
                    input_side: 1,
                });
                n3
            }
        };
        let output = Dense::glorot(last_width, spec.num_classes, &mut rng);
        Ok(Self {
            spec: spec.clone(),
            blocks,
            output,
            dropout_rate: config.dropout_rate,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn blocks(&self) -> &[HiddenBlock<T>] {
        &self.blocks
    }

    pub fn output_layer(&self) -> &Dense<T> {
        &self.output
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    /// Trainable tensors: per block `W, b[, gamma, beta]`, then the
    /// classification layer's `W, b`.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut v = Vec::new();
        for b in &self.blocks {
            match &b.linear {
                Linear::Dense(d) => v.extend([&d.weight, &d.bias]),
                Linear::Conv(c) => v.extend([&c.weight, &c.bias]),
            }
            if let Some(bn) = &b.batchnorm {
                v.extend([&bn.gamma, &bn.beta]);
            }
        }
        v.extend([&self.output.weight, &self.output.bias]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Vec::new();
        for b in &mut self.blocks {
            match &mut b.linear {
                Linear::Dense(d) => v.extend([&mut d.weight, &mut d.bias]),
                Linear::Conv(c) => v.extend([&mut c.weight, &mut c.bias]),
            }
            if let Some(bn) = &mut b.batchnorm {
                v.extend([&mut bn.gamma, &mut bn.beta]);
            }
        }
        v.extend([&mut self.output.weight, &mut self.output.bias]);
        v
    }

    /// For each entry of [`params`](Self::params): whether it is a weight
    /// matrix subject to the L2 penalty.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut v = Vec::new();
        for b in &self.blocks {
            v.extend([true, false]);
            if b.batchnorm.is_some() {
                v.extend([false, false]);
            }
        }
        v.extend([true, false]);
        v
    }

    /// Batch-norm running statistics (not trainable), block order.
    pub fn running_stats(&self) -> Vec<&Tensor<T>> {
        self.blocks
            .iter()
            .filter_map(|b| b.batchnorm.as_ref())
            .flat_map(|bn| [&bn.running_mean, &bn.running_var])
            .collect()
    }

    pub fn running_stats_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.blocks
            .iter_mut()
            .filter_map(|b| b.batchnorm.as_mut())
            .flat_map(|bn| [&mut bn.running_mean, &mut bn.running_var])
            .collect()
    }

    /// Weight and bias elements, including batch-norm scale and shift.
    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// `Σ w²` over all weight matrices (biases and batch-norm excluded).
    pub fn l2_sum(&self) -> T {
        self.params()
            .iter()
            .zip(self.decay_mask())
            .filter(|(_, d)| *d)
            .map(|(t, _)| t.sum_squares())
            .sum()
    }

    /// Runs the network on a `(B, 28, 28)` batch.
    ///
    /// `rng` drives dropout masks in train mode and is otherwise unused.
    pub fn forward<R: Rng>(&self, input: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<Forward<T>> {
        let shape = input.shape();
        if shape.len() != 3 || shape[1] != IMAGE_SIDE || shape[2] != IMAGE_SIDE {
            return Err(Error::Dimension(format!(
                "expected a (batch, 28, 28) input, got {shape:?}"
            )));
        }
        let batch = shape[0];
        let train = mode == Mode::Train;
        let mut x = input.data().to_vec();
        let mut caches = Vec::with_capacity(self.blocks.len());

        for block in &self.blocks {
            let width = block.width();
            let (mut a, saved_input, state_shape) = match &block.linear {
                Linear::Dense(d) => {
                    let z = d.forward(&x, batch);
                    (z, x, vec![batch, width])
                }
                Linear::Conv(c) if c.uses_direct_path() => {
                    let out = block.output_side();
                    let z = c.forward_single_channel(&x, batch, block.input_side);
                    (z, x, vec![batch, out, out, width])
                }
                Linear::Conv(c) => {
                    let out = block.output_side();
                    let cols = c.im2col(&x, batch, block.input_side);
                    let z = c.forward_cols(&cols, batch * out * out);
                    (z, cols, vec![batch, out, out, width])
                }
            };
            a.iter_mut().for_each(|v| *v = elu(*v));
            let act = if train { a.clone() } else { Vec::new() };

            let (mut y, bn) = match &block.batchnorm {
                Some(bn) if train => {
                    let (y, cache) = bn.forward_train(&a);
                    (y, Some(cache))
                }
                Some(bn) => (bn.forward_eval(&a), None),
                None => (a, None),
            };

            let mask = (train && block.dropout && self.dropout_rate > 0.0).then(|| {
                let m: Vec<T> = dropout_mask(y.len(), self.dropout_rate, rng);
                y.iter_mut().zip(&m).for_each(|(v, &k)| *v = *v * k);
                m
            });

            let state = Tensor::from_vec(&state_shape, y)?;
            let (next, pool_arg) = if block.is_conv() {
                let out = block.output_side();
                let (p, arg) = max_pool2(state.data(), batch, out, width);
                (p, Some(arg))
            } else {
                (state.data().to_vec(), None)
            };
            caches.push(BlockCache {
                input: if train { saved_input } else { Vec::new() },
                act,
                bn,
                mask,
                state,
                pool_arg,
            });
            x = next;
        }

        let mut logits = self.output.forward(&x, batch);
        if self.spec.output_elu {
            logits.iter_mut().for_each(|v| *v = elu(*v));
        }
        let probs = softmax(&logits, self.spec.num_classes);
        Ok(Forward {
            batch,
            mode,
            blocks: caches,
            output_input: if train { x } else { Vec::new() },
            logits,
            probs,
        })
    }

    /// Cross-entropy plus `λ·Σw²` for a forward pass.
    pub fn loss(&self, fwd: &Forward<T>, labels: &[u8], l2_lambda: f64) -> T {
        cross_entropy(&fwd.probs, labels, self.spec.num_classes)
            + T::lit(l2_lambda) * self.l2_sum()
    }

    /// Backpropagates a train-mode forward pass.
    pub fn backward(&self, fwd: &Forward<T>, labels: &[u8], l2_lambda: f64) -> Result<Gradients<T>> {
        if fwd.mode != Mode::Train {
            return Err(Error::Config("backward requires a train-mode forward pass".into()));
        }
        if labels.len() != fwd.batch {
            return Err(Error::Dimension(format!(
                "{} labels for a batch of {}",
                labels.len(),
                fwd.batch
            )));
        }
        let batch = fwd.batch;
        let classes = self.spec.num_classes;
        let two_lambda = T::lit(2.0 * l2_lambda);
        let add_decay = |mut g: Tensor<T>, w: &Tensor<T>| {
            if l2_lambda != 0.0 {
                g.data_mut()
                    .iter_mut()
                    .zip(w.data())
                    .for_each(|(g, &w)| *g = *g + two_lambda * w);
            }
            g
        };

        let mut d = softmax_cross_entropy_grad(&fwd.probs, labels, classes);
        if self.spec.output_elu {
            d.iter_mut()
                .zip(&fwd.logits)
                .for_each(|(g, &y)| *g = *g * elu_grad_from_output(y));
        }
        let (dw, db, dx) = self.output.backward(&fwd.output_input, &d, batch, true);
        let output_grads = [add_decay(dw, &self.output.weight), db];
        let mut d = dx.expect("requested");

        let mut per_block: Vec<Vec<Tensor<T>>> = Vec::with_capacity(self.blocks.len());
        for (i, (block, cache)) in self.blocks.iter().zip(&fwd.blocks).enumerate().rev() {
            if let Some(arg) = &cache.pool_arg {
                d = max_pool2_backward(&d, arg, cache.state.len());
            }
            if let Some(mask) = &cache.mask {
                d.iter_mut().zip(mask).for_each(|(g, &m)| *g = *g * m);
            }
            let mut bn_grads = None;
            if let (Some(bn), Some(bc)) = (&block.batchnorm, &cache.bn) {
                let (dx, dg, dbeta) = bn.backward(bc, &d);
                d = dx;
                bn_grads = Some([dg, dbeta]);
            }
            d.iter_mut()
                .zip(&cache.act)
                .for_each(|(g, &y)| *g = *g * elu_grad_from_output(y));
            let need_dx = i > 0;
            let mut grads = match &block.linear {
                Linear::Dense(dense) => {
                    let (dw, db, dx) = dense.backward(&cache.input, &d, batch, need_dx);
                    if let Some(dx) = dx {
                        d = dx;
                    }
                    vec![add_decay(dw, &dense.weight), db]
                }
                Linear::Conv(conv) if conv.uses_direct_path() => {
                    let (dw, db, dx) = conv.backward_single_channel(
                        &cache.input,
                        &d,
                        batch,
                        block.input_side,
                        need_dx,
                    );
                    if let Some(dx) = dx {
                        d = dx;
                    }
                    vec![add_decay(dw, &conv.weight), db]
                }
                Linear::Conv(conv) => {
                    let out = block.output_side();
                    let (dw, db, dcols) =
                        conv.backward_cols(&cache.input, &d, batch * out * out, need_dx);
                    if let Some(dc) = dcols {
                        d = conv.col2im(&dc, batch, block.input_side);
                    }
                    vec![add_decay(dw, &conv.weight), db]
                }
            };
            if let Some(bg) = bn_grads {
                grads.extend(bg);
            }
            per_block.push(grads);
        }
        let tensors = per_block
            .into_iter()
            .rev()
            .flatten()
            .chain(output_grads)
            .collect();
        Ok(Gradients { tensors })
    }

    /// Loss and gradients for one batch (train-mode forward + backward).
    pub fn loss_and_gradients<R: Rng>(
        &self,
        input: &Tensor<T>,
        labels: &[u8],
        l2_lambda: f64,
        rng: &mut R,
    ) -> Result<(T, Gradients<T>, Forward<T>)> {
        let fwd = self.forward(input, Mode::Train, rng)?;
        let loss = self.loss(&fwd, labels, l2_lambda);
        if !loss.is_finite() {
            return Err(Error::NumericalDivergence(format!(
                "loss became {loss} for {}",
                self.spec.label()
            )));
        }
        let grads = self.backward(&fwd, labels, l2_lambda)?;
        Ok((loss, grads, fwd))
    }

    /// Folds a train-mode pass's batch statistics into the running averages.
    pub fn update_running_stats(&mut self, fwd: &Forward<T>) {
        for (block, cache) in self.blocks.iter_mut().zip(&fwd.blocks) {
            if let (Some(bn), Some(bc)) = (&mut block.batchnorm, &cache.bn) {
                bn.update_running(bc);
            }
        }
    }

    /// Eval-mode class predictions (argmax, lowest index on ties).
    pub fn predict(&self, input: &Tensor<T>) -> Result<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fwd = self.forward(input, Mode::Eval, &mut rng)?;
        Ok(fwd
            .probs
            .chunks_exact(self.spec.num_classes)
            .map(super::layers::argmax)
            .collect())
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let dense = |d: &Dense<T>| Dense {
            weight: d.weight.cast(),
            bias: d.bias.cast(),
        };
        Network {
            spec: self.spec.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| HiddenBlock {
                    linear: match &b.linear {
                        Linear::Dense(d) => Linear::Dense(dense(d)),
                        Linear::Conv(c) => Linear::Conv(Conv2d {
                            weight: c.weight.cast(),
                            bias: c.bias.cast(),
                        }),
                    },
                    batchnorm: b.batchnorm.as_ref().map(|bn| BatchNorm {
                        gamma: bn.gamma.cast(),
                        beta: bn.beta.cast(),
                        running_mean: bn.running_mean.cast(),
                        running_var: bn.running_var.cast(),
                        eps: bn.eps,
                        momentum: bn.momentum,
                    }),
                    dropout: b.dropout,
                    input_side: b.input_side,
                })
                .collect(),
            output: dense(&self.output),
            dropout_rate: self.dropout_rate,
        }
    }
}
