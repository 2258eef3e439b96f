//! Network definition: configuration and shape planning, Glorot-style
//! seeded initialization, forward pass with cached intermediates, and
//! exact backpropagation through the sigmoid/BCE head.
//!
//! Architecture: a stack of valid stride-1 conv3d + ReLU stages, each
//! optionally followed by 2×2×2 max pooling, then flatten, one dense
//! ReLU layer, and a one-unit sigmoid output.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ops::{bce_loss, conv3d_forward, maxpool3d, sigmoid, ConvKernel};
use super::tensor::{Scalar, Tensor4};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::volume::Volume3;

fn default_conv_channels() -> Vec<usize> {
    vec![8, 8, 16]
}

fn default_kernel() -> usize {
    3
}

fn default_pool_after() -> BTreeSet<usize> {
    BTreeSet::from([0, 1])
}

fn default_dense_units() -> usize {
    16
}

fn default_output_units() -> usize {
    1
}

/// Hyperparameters fixing the network's shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_shape: (usize, usize, usize),
    #[serde(default = "default_conv_channels")]
    pub conv_channels: Vec<usize>,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_pool_after")]
    pub pool_after: BTreeSet<usize>,
    #[serde(default = "default_dense_units")]
    pub dense_units: usize,
    #[serde(default = "default_output_units")]
    pub output_units: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::with_input((61, 73, 61))
    }
}

impl ModelConfig {
    /// Default hyperparameters (channels [8, 8, 16], kernel 3, pooling
    /// after the first two convs, 16 dense units) on a given input shape.
    pub fn with_input(input_shape: (usize, usize, usize)) -> Self {
        ModelConfig {
            input_shape,
            conv_channels: default_conv_channels(),
            kernel: default_kernel(),
            pool_after: default_pool_after(),
            dense_units: default_dense_units(),
            output_units: default_output_units(),
        }
    }

    /// Check structural constraints and derive per-stage shapes. Every
    /// spatial dimension must stay >= 1 through the whole stack.
    pub fn validate(&self) -> Result<LayerPlan> {
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel {} must be odd and >= 1",
                self.kernel
            )));
        }
        if self.conv_channels.is_empty() {
            return Err(Error::InvalidConfig("conv_channels is empty".into()));
        }
        if self.conv_channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig("conv channel counts must be >= 1".into()));
        }
        if self.dense_units == 0 {
            return Err(Error::InvalidConfig("dense_units must be >= 1".into()));
        }
        if self.output_units != 1 {
            return Err(Error::InvalidConfig(format!(
                "output_units must be 1 (binary sigmoid head), got {}",
                self.output_units
            )));
        }
        if let Some(&bad) = self
            .pool_after
            .iter()
            .find(|&&i| i >= self.conv_channels.len())
        {
            return Err(Error::InvalidConfig(format!(
                "pool_after index {bad} out of range for {} conv layers",
                self.conv_channels.len()
            )));
        }
        let mut dims = [
            self.input_shape.0,
            self.input_shape.1,
            self.input_shape.2,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!(
                "input shape {:?} has a zero dimension",
                self.input_shape
            )));
        }
        let mut stages = Vec::with_capacity(self.conv_channels.len());
        for (i, &ch) in self.conv_channels.iter().enumerate() {
            for d in dims.iter_mut() {
                if *d < self.kernel {
                    return Err(Error::InvalidConfig(format!(
                        "conv layer {i}: kernel {} exceeds spatial dim {d}",
                        self.kernel
                    )));
                }
                *d = *d - self.kernel + 1;
            }
            let conv_out = (dims[0], dims[1], dims[2]);
            let pooled = if self.pool_after.contains(&i) {
                for d in dims.iter_mut() {
                    *d /= 2;
                    if *d == 0 {
                        return Err(Error::InvalidConfig(format!(
                            "pool after conv {i} collapses a spatial dim to 0"
                        )));
                    }
                }
                Some((dims[0], dims[1], dims[2]))
            } else {
                None
            };
            stages.push(ConvStage {
                channels: ch,
                conv_out,
                pooled,
            });
        }
        let last = stages.last().expect("nonempty");
        let (fx, fy, fz) = last.pooled.unwrap_or(last.conv_out);
        let flatten_len = last.channels * fx * fy * fz;
        Ok(LayerPlan {
            stages,
            flatten_len,
        })
    }
}

/// Spatial shape after each conv stage (and after its pool, if any).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStage {
    pub channels: usize,
    pub conv_out: (usize, usize, usize),
    pub pooled: Option<(usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    pub stages: Vec<ConvStage>,
    pub flatten_len: usize,
}

/// Total trainable parameters (weights + biases) of a valid config.
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    let plan = config.validate()?;
    let k3 = config.kernel.pow(3);
    let mut total = 0usize;
    let mut in_c = 1usize;
    for stage in &plan.stages {
        total += stage.channels * in_c * k3 + stage.channels;
        in_c = stage.channels;
    }
    total += plan.flatten_len * config.dense_units + config.dense_units;
    total += config.dense_units * config.output_units + config.output_units;
    Ok(total)
}

/// The network with its parameters. `S` selects storage precision: f32
/// in production, f64 for finite-difference verification.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S: Scalar> {
    config: ModelConfig,
    plan: LayerPlan,
    convs: Vec<ConvKernel<S>>,
    dense_w: Vec<S>,
    dense_b: Vec<S>,
    out_w: Vec<S>,
    out_b: Vec<S>,
}

impl<S: Scalar> Model<S> {
    /// All parameters zero. Forward output is exactly sigmoid(0) = 0.5.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        let plan = config.validate()?;
        let mut convs = Vec::with_capacity(config.conv_channels.len());
        let mut in_c = 1usize;
        for stage in &plan.stages {
            convs.push(ConvKernel::zeros(stage.channels, in_c, config.kernel));
            in_c = stage.channels;
        }
        Ok(Model {
            convs,
            dense_w: vec![S::zero(); plan.flatten_len * config.dense_units],
            dense_b: vec![S::zero(); config.dense_units],
            out_w: vec![S::zero(); config.dense_units],
            out_b: vec![S::zero(); 1],
            config: config.clone(),
            plan,
        })
    }

    /// Seeded fan-based uniform init: weights uniform in ±sqrt(6 /
    /// (fan_in + fan_out)), biases zero. Weights are drawn in parameter
    /// storage order, layer by layer, from the given stream.
    pub fn init(config: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let mut model = Model::zeros(config)?;
        let k3 = config.kernel.pow(3);
        for kern in model.convs.iter_mut() {
            let fan_in = (kern.in_c * k3) as f64;
            let fan_out = (kern.out_c * k3) as f64;
            let limit = (6.0 / (fan_in + fan_out)).sqrt();
            for w in kern.weights.iter_mut() {
                *w = S::from_f64(rng.uniform(-limit, limit));
            }
        }
        let limit = (6.0 / (model.plan.flatten_len + config.dense_units) as f64).sqrt();
        for w in model.dense_w.iter_mut() {
            *w = S::from_f64(rng.uniform(-limit, limit));
        }
        let limit = (6.0 / (config.dense_units + config.output_units) as f64).sqrt();
        for w in model.out_w.iter_mut() {
            *w = S::from_f64(rng.uniform(-limit, limit));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn plan(&self) -> &LayerPlan {
        &self.plan
    }

    /// Number of parameter tensors in canonical order: for each conv
    /// layer its weights then bias, then dense weights, dense bias,
    /// output weights, output bias.
    pub fn tensor_count(&self) -> usize {
        2 * self.convs.len() + 4
    }

    pub fn tensor(&self, t: usize) -> &[S] {
        let nc = self.convs.len();
        match t {
            i if i < 2 * nc && i % 2 == 0 => &self.convs[i / 2].weights,
            i if i < 2 * nc => &self.convs[i / 2].bias,
            i if i == 2 * nc => &self.dense_w,
            i if i == 2 * nc + 1 => &self.dense_b,
            i if i == 2 * nc + 2 => &self.out_w,
            i if i == 2 * nc + 3 => &self.out_b,
            _ => panic!("tensor index {t} out of range"),
        }
    }

    pub fn tensor_mut(&mut self, t: usize) -> &mut [S] {
        let nc = self.convs.len();
        match t {
            i if i < 2 * nc && i % 2 == 0 => &mut self.convs[i / 2].weights,
            i if i < 2 * nc => &mut self.convs[i / 2].bias,
            i if i == 2 * nc => &mut self.dense_w,
            i if i == 2 * nc + 1 => &mut self.dense_b,
            i if i == 2 * nc + 2 => &mut self.out_w,
            i if i == 2 * nc + 3 => &mut self.out_b,
            _ => panic!("tensor index {t} out of range"),
        }
    }

    pub fn param_len(&self) -> usize {
        (0..self.tensor_count()).map(|t| self.tensor(t).len()).sum()
    }

    fn locate(&self, i: usize) -> (usize, usize) {
        let mut off = i;
        for t in 0..self.tensor_count() {
            let len = self.tensor(t).len();
            if off < len {
                return (t, off);
            }
            off -= len;
        }
        panic!("flat parameter index {i} out of range");
    }

    pub fn param_get(&self, i: usize) -> f64 {
        let (t, j) = self.locate(i);
        self.tensor(t)[j].to_f64()
    }

    pub fn param_set(&mut self, i: usize, v: f64) {
        let (t, j) = self.locate(i);
        self.tensor_mut(t)[j] = S::from_f64(v);
    }

    fn check_input(&self, input: &Tensor4<S>) -> Result<()> {
        if input.channels() != 1 || input.shape() != self.config.input_shape {
            return Err(Error::ShapeMismatch(format!(
                "input {}x{:?} does not match configured shape 1x{:?}",
                input.channels(),
                input.shape(),
                self.config.input_shape
            )));
        }
        Ok(())
    }

    /// Forward pass retaining every intermediate needed by backward.
    pub fn forward_cached(&self, input: &Tensor4<S>) -> Result<ForwardCache<S>> {
        self.check_input(input)?;
        let mut conv_inputs = Vec::with_capacity(self.convs.len());
        let mut pre_relu = Vec::with_capacity(self.convs.len());
        let mut argmax = Vec::with_capacity(self.convs.len());
        let mut cur = input.clone();
        for (i, kern) in self.convs.iter().enumerate() {
            let pre = conv3d_forward(&cur, kern)?;
            let mut act = pre.clone();
            for v in act.data_mut() {
                if v.to_f64() <= 0.0 {
                    *v = S::zero();
                }
            }
            conv_inputs.push(cur);
            pre_relu.push(pre);
            if self.config.pool_after.contains(&i) {
                let (pooled, am) = maxpool3d(&act);
                argmax.push(Some(am));
                cur = pooled;
            } else {
                argmax.push(None);
                cur = act;
            }
        }
        // flatten: the tensor's linear data order is the flatten order
        let flat: Vec<S> = cur.data().to_vec();
        debug_assert_eq!(flat.len(), self.plan.flatten_len);
        let f = self.plan.flatten_len;
        let mut dense_pre = vec![0.0f64; self.config.dense_units];
        for (u, pre) in dense_pre.iter_mut().enumerate() {
            let mut acc = self.dense_b[u].to_f64();
            for (j, &x) in flat.iter().enumerate() {
                acc += self.dense_w[u * f + j].to_f64() * x.to_f64();
            }
            *pre = acc;
        }
        let dense_act: Vec<f64> = dense_pre.iter().map(|&p| p.max(0.0)).collect();
        let mut logit = self.out_b[0].to_f64();
        for (u, &a) in dense_act.iter().enumerate() {
            logit += self.out_w[u].to_f64() * a;
        }
        let prob = sigmoid(logit);
        Ok(ForwardCache {
            conv_inputs,
            pre_relu,
            argmax,
            flat,
            dense_pre,
            dense_act,
            prob,
        })
    }

    /// Probability that the input is positive-class, in (0, 1).
    pub fn forward(&self, input: &Tensor4<S>) -> Result<f64> {
        Ok(self.forward_cached(input)?.prob)
    }

    pub fn forward_volume(&self, vol: &Volume3) -> Result<f64> {
        self.forward(&Tensor4::from_volume(vol))
    }

    /// Exact gradients of bce_loss(forward(input), y) for every
    /// parameter. `y` is the 0/1 label. Gradients accumulate in f64.
    pub fn backward(&self, cache: &ForwardCache<S>, y: f64) -> Gradients {
        let mut g = Gradients::zeros_like(self);
        let nc = self.convs.len();
        let f = self.plan.flatten_len;
        let dlogit = cache.prob - y;

        // output layer
        for (u, &a) in cache.dense_act.iter().enumerate() {
            g.tensors[2 * nc + 2][u] = dlogit * a;
        }
        g.tensors[2 * nc + 3][0] = dlogit;

        // dense layer
        let mut dpre = vec![0.0f64; self.config.dense_units];
        for (u, dp) in dpre.iter_mut().enumerate() {
            if cache.dense_pre[u] > 0.0 {
                *dp = dlogit * self.out_w[u].to_f64();
            }
        }
        let mut dflat = vec![0.0f64; f];
        for (u, &dp) in dpre.iter().enumerate() {
            g.tensors[2 * nc + 1][u] = dp;
            if dp != 0.0 {
                let row = &self.dense_w[u * f..(u + 1) * f];
                let grow = &mut g.tensors[2 * nc][u * f..(u + 1) * f];
                for j in 0..f {
                    grow[j] = dp * cache.flat[j].to_f64();
                    dflat[j] += dp * row[j].to_f64();
                }
            }
        }

        // conv stack, last stage first
        let mut dcur = dflat;
        for s in (0..nc).rev() {
            // undo pooling: scatter into the pool's input shape
            if let Some(am) = &cache.argmax[s] {
                let mut dfull = vec![0.0f64; cache.pre_relu[s].data().len()];
                for (o, &src) in am.iter().enumerate() {
                    dfull[src] += dcur[o];
                }
                dcur = dfull;
            }
            // ReLU mask from the cached pre-activation
            for (dv, pre) in dcur.iter_mut().zip(cache.pre_relu[s].data()) {
                if pre.to_f64() <= 0.0 {
                    *dv = 0.0;
                }
            }
            // conv backward: weight grads and input grads
            let kern = &self.convs[s];
            let input = &cache.conv_inputs[s];
            let out = &cache.pre_relu[s];
            let (ox, oy, oz) = out.shape();
            let k = kern.k;
            let mut dinput = vec![0.0f64; input.data().len()];
            let (gw_half, gb_half) = g.tensors.split_at_mut(2 * s + 1);
            let gw = &mut gw_half[2 * s];
            let gb = &mut gb_half[0];
            for oc in 0..kern.out_c {
                for z in 0..oz {
                    for yy in 0..oy {
                        for x in 0..ox {
                            let gv = dcur[out.lin(oc, x, yy, z)];
                            if gv == 0.0 {
                                continue;
                            }
                            gb[oc] += gv;
                            for ic in 0..kern.in_c {
                                for kz in 0..k {
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            let wi = kern.w_lin(oc, ic, kx, ky, kz);
                                            let ii = input.lin(ic, x + kx, yy + ky, z + kz);
                                            gw[wi] += gv * input.data()[ii].to_f64();
                                            dinput[ii] += gv * kern.weights[wi].to_f64();
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            dcur = dinput;
        }
        g
    }

    /// Loss and gradients for a single labeled sample.
    pub fn loss_and_gradients(&self, input: &Tensor4<S>, y: f64) -> Result<(f64, Gradients)> {
        let cache = self.forward_cached(input)?;
        let loss = bce_loss(cache.prob, y);
        let grads = self.backward(&cache, y);
        Ok((loss, grads))
    }

    /// Mean loss and mean gradients over a batch. Per-sample passes may
    /// run in parallel; the reduction is an ordered sequential sum over
    /// sample index, so results do not depend on worker count.
    pub fn batch_gradients(&self, batch: &[(&Tensor4<S>, f64)]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        let per_sample: Vec<(f64, Gradients)> = batch
            .par_iter()
            .map(|(input, y)| self.loss_and_gradients(input, *y))
            .collect::<Result<Vec<_>>>()?;
        let inv = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut total = Gradients::zeros_like(self);
        for (l, g) in &per_sample {
            loss += l;
            total.add_assign(g);
        }
        total.scale(inv);
        Ok((loss * inv, total))
    }
}

/// Intermediates of one forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct ForwardCache<S: Scalar> {
    conv_inputs: Vec<Tensor4<S>>,
    pre_relu: Vec<Tensor4<S>>,
    argmax: Vec<Option<Vec<usize>>>,
    flat: Vec<S>,
    dense_pre: Vec<f64>,
    dense_act: Vec<f64>,
    pub prob: f64,
}

impl<S: Scalar> ForwardCache<S> {
    /// Smallest |pre-activation| across every ReLU in the pass. Used by
    /// the finite-difference check to rule out kink crossings.
    pub fn min_relu_margin(&self) -> f64 {
        let conv = self
            .pre_relu
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| v.to_f64().abs())
            .fold(f64::INFINITY, f64::min);
        let dense = self
            .dense_pre
            .iter()
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min);
        conv.min(dense)
    }

    /// Smallest gap between a pooling window's max and runner-up across
    /// all pooled stages; infinity when nothing pools. Used by the
    /// finite-difference check to rule out argmax flips.
    pub fn min_pool_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for (s, am) in self.argmax.iter().enumerate() {
            if am.is_none() {
                continue;
            }
            // reconstruct the pool input (post-relu) from the pre-relu tensor
            let pre = &self.pre_relu[s];
            let (nx, ny, nz) = pre.shape();
            let (ox, oy, oz) = (nx / 2, ny / 2, nz / 2);
            for c in 0..pre.channels() {
                for z in 0..oz {
                    for y in 0..oy {
                        for x in 0..ox {
                            let mut best = f64::NEG_INFINITY;
                            let mut second = f64::NEG_INFINITY;
                            for dz in 0..2 {
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        let v = pre
                                            .get(c, 2 * x + dx, 2 * y + dy, 2 * z + dz)
                                            .to_f64()
                                            .max(0.0);
                                        if v > best {
                                            second = best;
                                            best = v;
                                        } else if v > second {
                                            second = v;
                                        }
                                    }
                                }
                            }
                            gap = gap.min(best - second);
                        }
                    }
                }
            }
        }
        gap
    }
}

/// Per-parameter gradients in the model's canonical tensor order,
/// accumulated in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like<S: Scalar>(model: &Model<S>) -> Self {
        Gradients {
            tensors: (0..model.tensor_count())
                .map(|t| vec![0.0; model.tensor(t).len()])
                .collect(),
        }
    }

    /// Assemble from explicit per-tensor values (canonical order).
    pub fn from_tensors(tensors: Vec<Vec<f64>>) -> Self {
        Gradients { tensors }
    }

    pub fn tensor_count(&self) -> usize {
        self.tensors.len()
    }

    pub fn tensor(&self, t: usize) -> &[f64] {
        &self.tensors[t]
    }

    pub fn param_len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn flat_get(&self, i: usize) -> f64 {
        let mut off = i;
        for t in &self.tensors {
            if off < t.len() {
                return t[off];
            }
            off -= t.len();
        }
        panic!("flat gradient index {i} out of range");
    }

    pub fn scale(&mut self, f: f64) {
        for t in self.tensors.iter_mut() {
            for v in t.iter_mut() {
                *v *= f;
            }
        }
    }

    /// Elementwise sum; shapes must match (they do for gradients of the
    /// same model).
    pub fn add_assign(&mut self, other: &Gradients) {
        assert_eq!(self.tensors.len(), other.tensors.len(), "gradient tensor count");
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            assert_eq!(a.len(), b.len(), "gradient tensor length");
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}
