//! Parameters, forward and backward passes, and the Adagrad update for the
//! conv-pool-conv-dense-dense network.
//!
//! All activations are stored channel-major: `x[c * len + i]`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{architecture, NetworkConfig};
use crate::rng::{seeded, Rng};
use crate::{Error, Result};

pub const ADAGRAD_EPS: f64 = 1e-8;

pub(crate) const CONV1_W: usize = 0;
pub(crate) const CONV1_B: usize = 1;
pub(crate) const CONV2_W: usize = 2;
pub(crate) const CONV2_B: usize = 3;
pub(crate) const DENSE1_W: usize = 4;
pub(crate) const DENSE1_B: usize = 5;
pub(crate) const DENSE2_W: usize = 6;
pub(crate) const DENSE2_B: usize = 7;
pub(crate) const OUT_W: usize = 8;
pub(crate) const OUT_B: usize = 9;

pub const PARAMETER_NAMES: [&str; 10] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "dense1.weight",
    "dense1.bias",
    "dense2.weight",
    "dense2.bias",
    "output.weight",
    "output.bias",
];

/// Dense real tensor with an explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Sizes derived from a config.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dims {
    pub input: usize,
    pub c1: usize,
    pub c2: usize,
    pub kernel: usize,
    pub pool: usize,
    pub pooled: usize,
    pub flat: usize,
    pub h1: usize,
    pub h2: usize,
    pub out: usize,
}

impl Dims {
    pub fn new(config: &NetworkConfig) -> Self {
        let input = 6usize.pow(config.qubits as u32);
        let pooled = input / config.pool_size;
        Self {
            input,
            c1: config.conv1_filters,
            c2: config.conv2_filters,
            kernel: config.kernel_size,
            pool: config.pool_size,
            pooled,
            flat: config.conv2_filters * pooled,
            h1: config.dense1_units,
            h2: config.dense2_units,
            out: 4usize.pow(config.qubits as u32),
        }
    }

    pub fn shapes(&self) -> [Vec<usize>; 10] {
        [
            vec![self.c1, 1, self.kernel],
            vec![self.c1],
            vec![self.c2, self.c1, self.kernel],
            vec![self.c2],
            vec![self.h1, self.flat],
            vec![self.h1],
            vec![self.h2, self.h1],
            vec![self.h2],
            vec![self.out, self.h2],
            vec![self.out],
        ]
    }
}

/// Network weights with their Adagrad accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: NetworkConfig,
    pub params: Vec<Tensor>,
    pub accumulators: Vec<Tensor>,
}

/// Gradients, one tensor per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    /// All weights and biases zero.
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        architecture(config)?;
        let shapes = Dims::new(config).shapes();
        let params: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        Ok(Self {
            config: config.clone(),
            accumulators: params.clone(),
            params,
        })
    }

    /// Glorot-uniform weights seeded from `config.seed`, zero biases.
    pub fn init(config: &NetworkConfig) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = seeded(config.seed);
        for idx in [CONV1_W, CONV2_W, DENSE1_W, DENSE2_W, OUT_W] {
            let t = &mut model.params[idx];
            let (fan_in, fan_out) = match t.shape.as_slice() {
                [out, inp, k] => (inp * k, out * k),
                [out, inp] => (*inp, *out),
                _ => unreachable!("weight tensors are 2-D or 3-D"),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut t.data {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(model)
    }

    pub fn qubits(&self) -> usize {
        self.config.qubits
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub(crate) fn dims(&self) -> Dims {
        Dims::new(&self.config)
    }

    /// Checks tensor shapes against the config.
    pub fn validate(&self) -> Result<()> {
        architecture(&self.config)?;
        let shapes = self.dims().shapes();
        if self.params.len() != shapes.len() || self.accumulators.len() != shapes.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {} (accumulators {})",
                shapes.len(),
                self.params.len(),
                self.accumulators.len()
            )));
        }
        for ((p, a), (shape, name)) in self
            .params
            .iter()
            .zip(&self.accumulators)
            .zip(shapes.iter().zip(PARAMETER_NAMES))
        {
            for t in [p, a] {
                if &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                    return Err(Error::Config(format!(
                        "{name}: shape {:?} with {} values, expected {shape:?}",
                        t.shape,
                        t.data.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Forward pass to the tau prediction. Dropout is active only when a
    /// random source is supplied (training mode).
    pub fn forward(&self, input: &[f64], rng: Option<&mut Rng>) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input, rng)?.out)
    }

    pub(crate) fn forward_cached(&self, input: &[f64], rng: Option<&mut Rng>) -> Result<Cache> {
        let d = self.dims();
        if input.len() != d.input {
            return Err(Error::DimensionMismatch {
                expected: d.input,
                actual: input.len(),
            });
        }
        let p = &self.params;
        let rate = self.config.dropout_rate;

        let mut conv1 = vec![0.0; d.c1 * d.input];
        conv1d(
            input,
            1,
            d.input,
            &p[CONV1_W].data,
            &p[CONV1_B].data,
            d.c1,
            d.kernel,
            &mut conv1,
        );
        relu(&mut conv1);

        let mut pooled = vec![0.0; d.c1 * d.pooled];
        let mut argmax = vec![0; d.c1 * d.pooled];
        max_pool(&conv1, d.c1, d.input, d.pool, &mut pooled, &mut argmax);

        let mut conv2 = vec![0.0; d.c2 * d.pooled];
        conv1d(
            &pooled,
            d.c1,
            d.pooled,
            &p[CONV2_W].data,
            &p[CONV2_B].data,
            d.c2,
            d.kernel,
            &mut conv2,
        );
        relu(&mut conv2);

        let mut h1 = vec![0.0; d.h1];
        dense(&conv2, &p[DENSE1_W].data, &p[DENSE1_B].data, &mut h1);
        relu(&mut h1);
        let mut rng = rng;
        let mask1 = dropout_mask(d.h1, rate, rng.as_deref_mut());
        let a1 = apply_mask(&h1, mask1.as_deref());

        let mut h2 = vec![0.0; d.h2];
        dense(&a1, &p[DENSE2_W].data, &p[DENSE2_B].data, &mut h2);
        relu(&mut h2);
        let mask2 = dropout_mask(d.h2, rate, rng);
        let a2 = apply_mask(&h2, mask2.as_deref());

        let mut out = vec![0.0; d.out];
        dense(&a2, &p[OUT_W].data, &p[OUT_B].data, &mut out);

        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(Cache {
            conv1,
            pooled,
            argmax,
            conv2,
            h1,
            mask1,
            a1,
            h2,
            mask2,
            a2,
            out,
        })
    }

    /// Adds the gradient of `scale * |out - target|^2 / len` for one sample
    /// into `grads`, and returns that sample's unscaled MSE.
    pub(crate) fn accumulate_gradient(
        &self,
        input: &[f64],
        target: &[f64],
        scale: f64,
        rng: Option<&mut Rng>,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let d = self.dims();
        if target.len() != d.out {
            return Err(Error::DimensionMismatch {
                expected: d.out,
                actual: target.len(),
            });
        }
        let cache = self.forward_cached(input, rng)?;
        let p = &self.params;
        let g = &mut grads.tensors;

        let mut loss = 0.0;
        let mut d_out = vec![0.0; d.out];
        for ((g_o, o), t) in d_out.iter_mut().zip(&cache.out).zip(target) {
            let r = o - t;
            loss += r * r;
            *g_o = 2.0 * r * scale / d.out as f64;
        }
        loss /= d.out as f64;

        let mut d_a2 = vec![0.0; d.h2];
        dense_backward(
            &cache.a2,
            &d_out,
            &p[OUT_W].data,
            g,
            OUT_W,
            OUT_B,
            Some(&mut d_a2),
        );
        let d_z2 = relu_mask_backward(&d_a2, &cache.h2, cache.mask2.as_deref());

        let mut d_a1 = vec![0.0; d.h1];
        dense_backward(
            &cache.a1,
            &d_z2,
            &p[DENSE2_W].data,
            g,
            DENSE2_W,
            DENSE2_B,
            Some(&mut d_a1),
        );
        let d_z1 = relu_mask_backward(&d_a1, &cache.h1, cache.mask1.as_deref());

        let mut d_flat = vec![0.0; d.flat];
        dense_backward(
            &cache.conv2,
            &d_z1,
            &p[DENSE1_W].data,
            g,
            DENSE1_W,
            DENSE1_B,
            Some(&mut d_flat),
        );
        let d_conv2: Vec<f64> = d_flat
            .iter()
            .zip(&cache.conv2)
            .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
            .collect();

        let mut d_pooled = vec![0.0; d.c1 * d.pooled];
        conv1d_backward(
            &cache.pooled,
            d.c1,
            d.pooled,
            &p[CONV2_W].data,
            d.c2,
            d.kernel,
            &d_conv2,
            g,
            CONV2_W,
            CONV2_B,
            Some(&mut d_pooled),
        );

        let mut d_conv1 = vec![0.0; d.c1 * d.input];
        for (k, &src) in cache.argmax.iter().enumerate() {
            d_conv1[src] += d_pooled[k];
        }
        for (g, a) in d_conv1.iter_mut().zip(&cache.conv1) {
            if *a <= 0.0 {
                *g = 0.0;
            }
        }
        conv1d_backward(
            input,
            1,
            d.input,
            &p[CONV1_W].data,
            d.c1,
            d.kernel,
            &d_conv1,
            g,
            CONV1_W,
            CONV1_B,
            None,
        );
        Ok(loss)
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self
                .params
                .iter()
                .map(|t| Tensor::zeros(&t.shape))
                .collect(),
        }
    }
}

pub(crate) struct Cache {
    conv1: Vec<f64>,
    pooled: Vec<f64>,
    argmax: Vec<usize>,
    conv2: Vec<f64>,
    h1: Vec<f64>,
    mask1: Option<Vec<f64>>,
    a1: Vec<f64>,
    h2: Vec<f64>,
    mask2: Option<Vec<f64>>,
    a2: Vec<f64>,
    pub out: Vec<f64>,
}

/// Gradients of the mean batch MSE with respect to every parameter.
/// Dropout is applied when `rng` is supplied.
pub fn backward(
    model: &ModelParams,
    batch: &[(&[f64], &[f64])],
    mut rng: Option<&mut Rng>,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut grads = model.zero_gradients();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (input, target) in batch {
        loss += model.accumulate_gradient(input, target, scale, rng.as_deref_mut(), &mut grads)?;
    }
    let loss = loss * scale;
    if !loss.is_finite()
        || grads
            .tensors
            .iter()
            .any(|t| t.data.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite("loss or gradient".into()));
    }
    Ok((loss, grads))
}

/// `G += g^2; w -= lr * g / (sqrt(G) + 1e-8)`, elementwise.
pub fn adagrad_step(model: &mut ModelParams, grads: &Gradients, learning_rate: f64) -> Result<()> {
    if grads.tensors.len() != model.params.len() {
        return Err(Error::DimensionMismatch {
            expected: model.params.len(),
            actual: grads.tensors.len(),
        });
    }
    for ((w, acc), g) in model
        .params
        .iter_mut()
        .zip(model.accumulators.iter_mut())
        .zip(&grads.tensors)
    {
        if w.data.len() != g.data.len() {
            return Err(Error::DimensionMismatch {
                expected: w.data.len(),
                actual: g.data.len(),
            });
        }
        for ((wi, gi_acc), &gi) in w.data.iter_mut().zip(acc.data.iter_mut()).zip(&g.data) {
            *gi_acc += gi * gi;
            *wi -= learning_rate * gi / (gi_acc.sqrt() + ADAGRAD_EPS);
        }
    }
    Ok(())
}

fn relu(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Inverted-dropout mask: each unit kept with probability `1 - rate` and
/// scaled by `1 / (1 - rate)`. `None` outside training or at rate 0.
fn dropout_mask(len: usize, rate: f64, rng: Option<&mut Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    Some(
        (0..len)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect(),
    )
}

fn apply_mask(x: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
    match mask {
        Some(m) => x.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => x.to_vec(),
    }
}

fn relu_mask_backward(grad: &[f64], pre_mask: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
    grad.iter()
        .enumerate()
        .map(|(i, g)| {
            if pre_mask[i] <= 0.0 {
                0.0
            } else {
                mask.map_or(*g, |m| g * m[i])
            }
        })
        .collect()
}

/// `y = W x + b` with row-major `W[out][in]`.
fn dense(x: &[f64], w: &[f64], b: &[f64], y: &mut [f64]) {
    let n_in = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *yo = b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    }
}

fn dense_backward(
    x: &[f64],
    d_y: &[f64],
    w: &[f64],
    grads: &mut [Tensor],
    w_idx: usize,
    b_idx: usize,
    d_x: Option<&mut [f64]>,
) {
    let n_in = x.len();
    {
        let gw = &mut grads[w_idx].data;
        for (o, &g) in d_y.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (gwi, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                *gwi += g * xi;
            }
        }
    }
    for (gb, g) in grads[b_idx].data.iter_mut().zip(d_y) {
        *gb += g;
    }
    if let Some(d_x) = d_x {
        for (o, &g) in d_y.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (dxi, wi) in d_x.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                *dxi += g * wi;
            }
        }
    }
}

fn left_pad(kernel: usize) -> usize {
    (kernel - 1) / 2
}

/// Stride-1 convolution with zero padding that preserves length.
/// `w[o][c][j]`, input `x[c][i]`, output `y[o][i]`.
#[allow(clippy::too_many_arguments)]
fn conv1d(
    x: &[f64],
    in_ch: usize,
    len: usize,
    w: &[f64],
    b: &[f64],
    out_ch: usize,
    kernel: usize,
    y: &mut [f64],
) {
    let pad = left_pad(kernel);
    for o in 0..out_ch {
        let yo = &mut y[o * len..(o + 1) * len];
        yo.fill(b[o]);
        for c in 0..in_ch {
            let xc = &x[c * len..(c + 1) * len];
            let wk = &w[(o * in_ch + c) * kernel..(o * in_ch + c + 1) * kernel];
            for (j, &wj) in wk.iter().enumerate() {
                // y[i] += wj * x[i + j - pad] for indices inside the input
                let lo = pad.saturating_sub(j);
                let hi = (len + pad).saturating_sub(j).min(len);
                for i in lo..hi {
                    yo[i] += wj * xc[i + j - pad];
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv1d_backward(
    x: &[f64],
    in_ch: usize,
    len: usize,
    w: &[f64],
    out_ch: usize,
    kernel: usize,
    d_y: &[f64],
    grads: &mut [Tensor],
    w_idx: usize,
    b_idx: usize,
    mut d_x: Option<&mut [f64]>,
) {
    let pad = left_pad(kernel);
    for o in 0..out_ch {
        let dyo = &d_y[o * len..(o + 1) * len];
        grads[b_idx].data[o] += dyo.iter().sum::<f64>();
        for c in 0..in_ch {
            let xc = &x[c * len..(c + 1) * len];
            let base = (o * in_ch + c) * kernel;
            for j in 0..kernel {
                let lo = pad.saturating_sub(j);
                let hi = (len + pad).saturating_sub(j).min(len);
                let mut gw = 0.0;
                for i in lo..hi {
                    gw += dyo[i] * xc[i + j - pad];
                }
                grads[w_idx].data[base + j] += gw;
                if let Some(dx) = d_x.as_deref_mut() {
                    let wj = w[base + j];
                    let dxc = &mut dx[c * len..(c + 1) * len];
                    for i in lo..hi {
                        dxc[i + j - pad] += wj * dyo[i];
                    }
                }
            }
        }
    }
}

/// Non-overlapping max pooling; trailing elements that do not fill a window
/// are dropped. `argmax` records the flat source index of each maximum.
fn max_pool(x: &[f64], ch: usize, len: usize, pool: usize, y: &mut [f64], argmax: &mut [usize]) {
    let out_len = len / pool;
    for c in 0..ch {
        for i in 0..out_len {
            let start = c * len + i * pool;
            let mut best = start;
            for k in start + 1..start + pool {
                if x[k] > x[best] {
                    best = k;
                }
            }
            y[c * out_len + i] = x[best];
            argmax[c * out_len + i] = best;
        }
    }
}
