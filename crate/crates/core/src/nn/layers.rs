//! Layer kernels with explicit forward/backward passes.
//!
//! Activations are batch-major. Convolutional feature maps use NHWC layout
//! so that flattening matches the channels-last order and a spatial
//! location's channel vector is contiguous.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{matmul, Op, Scalar, Tensor};

/// Exponential linear unit with `alpha = 1`.
#[inline]
pub fn elu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp() - T::one()
    }
}

/// ELU derivative expressed through the output `y = elu(x)`.
#[inline]
pub fn elu_grad_from_output<T: Scalar>(y: T) -> T {
    if y > T::zero() {
        T::one()
    } else {
        y + T::one()
    }
}

pub fn elu_in_place<T: Scalar>(xs: &mut [T]) {
    xs.iter_mut().for_each(|x| *x = elu(*x));
}

/// Fully connected layer, `y = x · W + b` with `W` stored `(in, out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| T::lit(rng.gen_range(-limit..limit)))
            .collect();
        Self {
            weight: Tensor::from_vec(&[inputs, outputs], w).expect("dense shape"),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &[T], batch: usize) -> Vec<T> {
        let (i, o) = (self.inputs(), self.outputs());
        let mut y: Vec<T> = self
            .bias
            .data()
            .iter()
            .copied()
            .cycle()
            .take(batch * o)
            .collect();
        matmul(x, Op::N, self.weight.data(), Op::N, &mut y, batch, i, o, true);
        y
    }

    /// Returns `(dW, db, dx)`; `dx` only when requested.
    pub fn backward(
        &self,
        x: &[T],
        dy: &[T],
        batch: usize,
        need_dx: bool,
    ) -> (Tensor<T>, Tensor<T>, Option<Vec<T>>) {
        let (i, o) = (self.inputs(), self.outputs());
        let mut dw = Tensor::zeros(&[i, o]);
        matmul(x, Op::T, dy, Op::N, dw.data_mut(), i, batch, o, false);
        let db = column_sums(dy, o);
        let dx = need_dx.then(|| {
            let mut dx = vec![T::zero(); batch * i];
            matmul(dy, Op::N, self.weight.data(), Op::T, &mut dx, batch, o, i, false);
            dx
        });
        (dw, Tensor::from_vec(&[o], db).expect("bias shape"), dx)
    }
}

/// Valid (unpadded) square convolution, stride 1.
///
/// Weights are stored `(k, k, in_channels, out_channels)` which, flattened,
/// is the `(k·k·cin, cout)` matrix multiplied against im2col rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn glorot<R: Rng>(kernel: usize, cin: usize, cout: usize, rng: &mut R) -> Self {
        let fan_in = kernel * kernel * cin;
        let fan_out = kernel * kernel * cout;
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * cout)
            .map(|_| T::lit(rng.gen_range(-limit..limit)))
            .collect();
        Self {
            weight: Tensor::from_vec(&[kernel, kernel, cin, cout], w).expect("conv shape"),
            bias: Tensor::zeros(&[cout]),
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Whether the direct single-channel kernels beat im2col for this layer.
    /// Past a handful of filters the GEMM path wins.
    pub fn uses_direct_path(&self) -> bool {
        self.in_channels() == 1 && self.out_channels() <= 4
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[3]
    }

    pub fn output_side(&self, input_side: usize) -> usize {
        input_side + 1 - self.kernel()
    }

    /// Unrolls patches: one row per output location, `k·k·cin` columns.
    pub fn im2col(&self, x: &[T], batch: usize, side: usize) -> Vec<T> {
        let (k, cin) = (self.kernel(), self.in_channels());
        let out = self.output_side(side);
        let row_len = k * k * cin;
        let mut cols = Vec::with_capacity(batch * out * out * row_len);
        let span = k * cin;
        for img in x.chunks_exact(side * side * cin).take(batch) {
            for oy in 0..out {
                for ox in 0..out {
                    for ky in 0..k {
                        let src = ((oy + ky) * side + ox) * cin;
                        cols.extend_from_slice(&img[src..src + span]);
                    }
                }
            }
        }
        debug_assert_eq!(cols.len(), batch * out * out * row_len);
        cols
    }

    /// Scatter-adds column gradients back onto the input map.
    pub fn col2im(&self, dcols: &[T], batch: usize, side: usize) -> Vec<T> {
        let (k, cin) = (self.kernel(), self.in_channels());
        let out = self.output_side(side);
        let row_len = k * k * cin;
        let mut dx = vec![T::zero(); batch * side * side * cin];
        let mut rows = dcols.chunks_exact(row_len);
        for b in 0..batch {
            let img = &mut dx[b * side * side * cin..(b + 1) * side * side * cin];
            for oy in 0..out {
                for ox in 0..out {
                    let row = rows.next().expect("row count");
                    for ky in 0..k {
                        let dst = ((oy + ky) * side + ox) * cin;
                        let src = ky * k * cin;
                        for (d, &s) in img[dst..dst + k * cin]
                            .iter_mut()
                            .zip(&row[src..src + k * cin])
                        {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
        dx
    }

    /// Forward over im2col rows, producing an NHWC map.
    pub fn forward_cols(&self, cols: &[T], locations: usize) -> Vec<T> {
        let cout = self.out_channels();
        let row_len = cols.len() / locations.max(1);
        let mut y: Vec<T> = self
            .bias
            .data()
            .iter()
            .copied()
            .cycle()
            .take(locations * cout)
            .collect();
        matmul(cols, Op::N, self.weight.data(), Op::N, &mut y, locations, row_len, cout, true);
        y
    }

    /// Returns `(dW, db, dcols)`; `dcols` only when requested.
    pub fn backward_cols(
        &self,
        cols: &[T],
        dy: &[T],
        locations: usize,
        need_dcols: bool,
    ) -> (Tensor<T>, Tensor<T>, Option<Vec<T>>) {
        let cout = self.out_channels();
        let row_len = self.weight.len() / cout;
        let mut dw = Tensor::zeros(self.weight.shape());
        matmul(cols, Op::T, dy, Op::N, dw.data_mut(), row_len, locations, cout, false);
        let db = column_sums(dy, cout);
        let dcols = need_dcols.then(|| {
            let mut dc = vec![T::zero(); locations * row_len];
            matmul(dy, Op::N, self.weight.data(), Op::T, &mut dc, locations, cout, row_len, false);
            dc
        });
        (dw, Tensor::from_vec(&[cout], db).expect("bias shape"), dcols)
    }

    /// Direct convolution of a single-channel input, producing an NHWC map.
    ///
    /// Works one output channel plane at a time so that every inner loop is
    /// a contiguous run over an output row.
    pub fn forward_single_channel(&self, x: &[T], batch: usize, side: usize) -> Vec<T> {
        assert_eq!(self.in_channels(), 1, "single-channel path");
        let (k, cout) = (self.kernel(), self.out_channels());
        let out = self.output_side(side);
        let w = self.weight.data();
        let mut plane = vec![T::zero(); out * out];
        let mut y = vec![T::zero(); batch * out * out * cout];
        for (img, y_img) in x
            .chunks_exact(side * side)
            .zip(y.chunks_exact_mut(out * out * cout))
        {
            for c in 0..cout {
                plane.fill(self.bias.data()[c]);
                for (oy, row) in plane.chunks_exact_mut(out).enumerate() {
                    for ky in 0..k {
                        let src = &img[(oy + ky) * side..(oy + ky + 1) * side];
                        for kx in 0..k {
                            axpy(w[(ky * k + kx) * cout + c], &src[kx..kx + out], row);
                        }
                    }
                }
                for (dst, &v) in y_img.iter_mut().skip(c).step_by(cout).zip(&plane) {
                    *dst = v;
                }
            }
        }
        y
    }

    /// Gradients of [`Conv2d::forward_single_channel`] given the raw input.
    pub fn backward_single_channel(
        &self,
        x: &[T],
        dy: &[T],
        batch: usize,
        side: usize,
        need_dx: bool,
    ) -> (Tensor<T>, Tensor<T>, Option<Vec<T>>) {
        let (k, cout) = (self.kernel(), self.out_channels());
        let out = self.output_side(side);
        let w = self.weight.data();
        let mut dw = vec![T::zero(); k * k * cout];
        let mut db = vec![T::zero(); cout];
        let mut dx = need_dx.then(|| vec![T::zero(); batch * side * side]);
        let mut plane = vec![T::zero(); out * out];
        let mut acc = vec![T::zero(); out];
        for (b, (img, dy_img)) in x
            .chunks_exact(side * side)
            .zip(dy.chunks_exact(out * out * cout))
            .enumerate()
        {
            for c in 0..cout {
                for (p, &g) in plane.iter_mut().zip(dy_img.iter().skip(c).step_by(cout)) {
                    *p = g;
                }
                db[c] = db[c] + plane.iter().copied().sum::<T>();
                for ky in 0..k {
                    for kx in 0..k {
                        acc.fill(T::zero());
                        for (oy, grow) in plane.chunks_exact(out).enumerate() {
                            let start = (oy + ky) * side + kx;
                            for ((a, &g), &v) in acc.iter_mut().zip(grow).zip(&img[start..start + out]) {
                                *a = *a + g * v;
                            }
                        }
                        let idx = (ky * k + kx) * cout + c;
                        dw[idx] = dw[idx] + acc.iter().copied().sum::<T>();
                    }
                }
                for (oy, grow) in plane.chunks_exact(out).enumerate() {
                    if let Some(dx) = dx.as_mut() {
                        let dimg = &mut dx[b * side * side..(b + 1) * side * side];
                        for ky in 0..k {
                            let drow = &mut dimg[(oy + ky) * side..(oy + ky + 1) * side];
                            for kx in 0..k {
                                axpy(w[(ky * k + kx) * cout + c], grow, &mut drow[kx..kx + out]);
                            }
                        }
                    }
                }
            }
        }
        (
            Tensor::from_vec(self.weight.shape(), dw).expect("weight shape"),
            Tensor::from_vec(&[cout], db).expect("bias shape"),
            dx,
        )
    }
}

/// `y += a·x`.
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y = *y + a * x;
    }
}


/// 2×2 max pooling with stride 2 over an NHWC map. Returns the pooled map
/// and, per output element, the flat input index of the selected maximum.
pub fn max_pool2<T: Scalar>(
    x: &[T],
    batch: usize,
    side: usize,
    channels: usize,
) -> (Vec<T>, Vec<u32>) {
    let out = side / 2;
    let mut y = Vec::with_capacity(batch * out * out * channels);
    let mut arg = Vec::with_capacity(y.capacity());
    for b in 0..batch {
        let base = b * side * side * channels;
        for oy in 0..out {
            for ox in 0..out {
                for c in 0..channels {
                    let mut best_idx = base + ((2 * oy) * side + 2 * ox) * channels + c;
                    let mut best = x[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + ((2 * oy + dy) * side + 2 * ox + dx) * channels + c;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                    y.push(best);
                    arg.push(best_idx as u32);
                }
            }
        }
    }
    (y, arg)
}

pub fn max_pool2_backward<T: Scalar>(dy: &[T], argmax: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&g, &i) in dy.iter().zip(argmax) {
        dx[i as usize] = dx[i as usize] + g;
    }
    dx
}

/// Per-feature batch normalization over the last axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

/// Values saved by a training-mode batch-norm pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(features: usize, eps: f64, momentum: f64) -> Self {
        Self {
            gamma: Tensor::filled(&[features], T::one()),
            beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::filled(&[features], T::one()),
            eps,
            momentum,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes with batch statistics.
    pub fn forward_train(&self, x: &[T]) -> (Vec<T>, BatchNormCache<T>) {
        let c = self.features();
        let rows = x.len() / c;
        let n = T::lit(rows as f64);
        let mut mean = vec![T::zero(); c];
        for row in x.chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m = *m + v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / n);
        let mut var = vec![T::zero(); c];
        for row in x.chunks_exact(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s = *s + (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s = *s / n);
        let eps = T::lit(self.eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.len()];
        let mut y = vec![T::zero(); x.len()];
        let (g, b) = (self.gamma.data(), self.beta.data());
        for ((xr, hr), yr) in x
            .chunks_exact(c)
            .zip(xhat.chunks_exact_mut(c))
            .zip(y.chunks_exact_mut(c))
        {
            for j in 0..c {
                hr[j] = (xr[j] - mean[j]) * inv_std[j];
                yr[j] = g[j] * hr[j] + b[j];
            }
        }
        (
            y,
            BatchNormCache {
                xhat,
                inv_std,
                mean,
                var,
            },
        )
    }

    /// Normalizes with running statistics; an affine map per feature.
    pub fn forward_eval(&self, x: &[T]) -> Vec<T> {
        let c = self.features();
        let eps = T::lit(self.eps);
        let scale: Vec<T> = (0..c)
            .map(|j| self.gamma.data()[j] / (self.running_var.data()[j] + eps).sqrt())
            .collect();
        let shift: Vec<T> = (0..c)
            .map(|j| self.beta.data()[j] - scale[j] * self.running_mean.data()[j])
            .collect();
        let mut y = x.to_vec();
        for row in y.chunks_exact_mut(c) {
            for j in 0..c {
                row[j] = row[j] * scale[j] + shift[j];
            }
        }
        y
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(&self, cache: &BatchNormCache<T>, dy: &[T]) -> (Vec<T>, Tensor<T>, Tensor<T>) {
        let c = self.features();
        let rows = dy.len() / c;
        let n = T::lit(rows as f64);
        let g = self.gamma.data();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for (dr, hr) in dy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
            for j in 0..c {
                dgamma[j] = dgamma[j] + dr[j] * hr[j];
                dbeta[j] = dbeta[j] + dr[j];
            }
        }
        // dx = inv_std/N * (N*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat)), dxhat = dy*gamma
        let mut dx = vec![T::zero(); dy.len()];
        for ((dxr, dr), hr) in dx
            .chunks_exact_mut(c)
            .zip(dy.chunks_exact(c))
            .zip(cache.xhat.chunks_exact(c))
        {
            for j in 0..c {
                let dxhat = dr[j] * g[j];
                let sum_dxhat = dbeta[j] * g[j];
                let sum_dxhat_xhat = dgamma[j] * g[j];
                dxr[j] = cache.inv_std[j] / n * (n * dxhat - sum_dxhat - hr[j] * sum_dxhat_xhat);
            }
        }
        (
            dx,
            Tensor::from_vec(&[c], dgamma).expect("gamma shape"),
            Tensor::from_vec(&[c], dbeta).expect("beta shape"),
        )
    }

    /// Exponential moving average toward the batch statistics.
    pub fn update_running(&mut self, cache: &BatchNormCache<T>) {
        let m = T::lit(self.momentum);
        let one_m = T::one() - m;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&cache.mean) {
            *r = m * *r + one_m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&cache.var) {
            *r = m * *r + one_m * b;
        }
    }
}

/// Inverted-dropout mask: each entry is 0 or `1/(1-rate)`.
pub fn dropout_mask<T: Scalar, R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let keep = 1.0 - rate;
    let scale = T::lit(1.0 / keep);
    (0..len)
        .map(|_| {
            if rng.gen::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Row-wise softmax of `classes`-wide logits.
pub fn softmax<T: Scalar>(logits: &[T], classes: usize) -> Vec<T> {
    let mut p = logits.to_vec();
    for row in p.chunks_exact_mut(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
    p
}

/// Mean cross-entropy of softmax probabilities against integer labels.
pub fn cross_entropy<T: Scalar>(probs: &[T], labels: &[u8], classes: usize) -> T {
    let tiny = T::min_positive_value();
    let total: T = probs
        .chunks_exact(classes)
        .zip(labels)
        .map(|(row, &l)| -(row[l as usize].max(tiny)).ln())
        .sum();
    total / T::lit(labels.len() as f64)
}

/// Gradient of mean cross-entropy with respect to the logits.
pub fn softmax_cross_entropy_grad<T: Scalar>(probs: &[T], labels: &[u8], classes: usize) -> Vec<T> {
    let inv_b = T::one() / T::lit(labels.len() as f64);
    let mut g = probs.to_vec();
    for (row, &l) in g.chunks_exact_mut(classes).zip(labels) {
        row[l as usize] = row[l as usize] - T::one();
        row.iter_mut().for_each(|v| *v = *v * inv_b);
    }
    g
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn column_sums<T: Scalar>(m: &[T], cols: usize) -> Vec<T> {
    let mut s = vec![T::zero(); cols];
    for row in m.chunks_exact(cols) {
        for (a, &v) in s.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    s
}
