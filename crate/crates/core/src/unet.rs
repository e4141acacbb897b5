//! U-Net: `depth` encoder blocks with 2×2 max pooling, a bottleneck block,
//! `depth` decoder stages (2×2 stride-2 transposed conv, skip concat, conv
//! block) and a 1×1 classifier that emits logits.
//!
//! Encoder block `i` has `base_width · 2^i` output channels and the bottleneck
//! `base_width · 2^depth`. The decoder mirrors the encoder widths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{
    self, batchnorm2d, batchnorm2d_backward, batchnorm2d_inference, concat_channels, conv2d,
    conv2d_backward, conv_transpose2d, conv_transpose2d_backward, maxpool2d, maxpool2d_backward,
    relu, relu_backward, split_channels, BatchNormCache, BatchNormState, ConvParams, Mode,
    PoolIndices,
};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub depth: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            in_channels: 3,
            out_channels: 1,
            base_width: 64,
            depth: 4,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("in_channels and out_channels must be >= 1".into()));
        }
        if self.base_width == 0 {
            return Err(Error::Config("base_width must be >= 1".into()));
        }
        if self.depth == 0 || self.depth > 16 {
            return Err(Error::Config(format!("depth must be in 1..=16, got {}", self.depth)));
        }
        Ok(())
    }

    /// Output channels of encoder level `level`; `level == depth` is the bottleneck.
    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Input height and width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }
}

/// Whether a tensor is learned or a batch-norm running statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    RunningStat,
}

fn kaiming<T: Scalar>(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let fan_in = shape.c * shape.h * shape.w;
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

fn conv_layer<T: Scalar>(in_c: usize, out_c: usize, k: usize, pad: usize, rng: &mut ChaCha8Rng) -> ConvParams<T> {
    let w = kaiming(Shape::new(out_c, in_c, k, k), rng);
    ConvParams::with_zero_bias(w, out_c, 1, pad).expect("valid conv params")
}

/// conv3×3 → BN → ReLU → conv3×3 → BN → ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T = f32> {
    pub conv1: ConvParams<T>,
    pub bn1: BatchNormState<T>,
    pub conv2: ConvParams<T>,
    pub bn2: BatchNormState<T>,
}

#[derive(Debug, Clone)]
pub struct ConvBlockCache<T> {
    input: Tensor<T>,
    bn1: BatchNormCache<T>,
    pre1: Tensor<T>,
    mid: Tensor<T>,
    bn2: BatchNormCache<T>,
    pre2: Tensor<T>,
}

impl<T: Scalar> ConvBlock<T> {
    pub fn new(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        ConvBlock {
            conv1: conv_layer(in_c, out_c, 3, 1, rng),
            bn1: BatchNormState::new(out_c),
            conv2: conv_layer(out_c, out_c, 3, 1, rng),
            bn2: BatchNormState::new(out_c),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.weight.shape().n
    }

    /// Inference-mode forward.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let a = conv2d(x, &self.conv1)?;
        let a = relu(&batchnorm2d_inference(&a, &self.bn1)?);
        let b = conv2d(&a, &self.conv2)?;
        Ok(relu(&batchnorm2d_inference(&b, &self.bn2)?))
    }

    /// Forward using each batch-norm layer's own mode, keeping what backward needs.
    pub fn forward_cached(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvBlockCache<T>)> {
        let a = conv2d(x, &self.conv1)?;
        let (pre1, bn1) = batchnorm2d(&a, &mut self.bn1)?;
        let mid = relu(&pre1);
        let b = conv2d(&mid, &self.conv2)?;
        let (pre2, bn2) = batchnorm2d(&b, &mut self.bn2)?;
        let out = relu(&pre2);
        let cache = ConvBlockCache {
            input: x.clone(),
            bn1,
            pre1,
            mid,
            bn2,
            pre2,
        };
        Ok((out, cache))
    }

    pub fn backward(&mut self, cache: &ConvBlockCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = relu_backward(&cache.pre2, grad_out)?;
        let g = batchnorm2d_backward(&mut self.bn2, &cache.bn2, &g)?;
        let g = conv2d_backward(&cache.mid, &mut self.conv2, &g)?;
        let g = relu_backward(&cache.pre1, &g)?;
        let g = batchnorm2d_backward(&mut self.bn1, &cache.bn1, &g)?;
        conv2d_backward(&cache.input, &mut self.conv1, &g)
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.bn1.mode = mode;
        self.bn2.mode = mode;
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ParamKind, &'a Tensor<T>)>) {
        push_conv(out, &format!("{prefix}.conv1"), &self.conv1);
        push_bn(out, &format!("{prefix}.bn1"), &self.bn1);
        push_conv(out, &format!("{prefix}.conv2"), &self.conv2);
        push_bn(out, &format!("{prefix}.bn2"), &self.bn2);
    }

    fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ParamKind, &'a mut Tensor<T>)>) {
        push_conv_mut(out, &format!("{prefix}.conv1"), &mut self.conv1);
        push_bn_mut(out, &format!("{prefix}.bn1"), &mut self.bn1);
        push_conv_mut(out, &format!("{prefix}.conv2"), &mut self.conv2);
        push_bn_mut(out, &format!("{prefix}.bn2"), &mut self.bn2);
    }
}

fn push_conv<'a, T>(out: &mut Vec<(String, ParamKind, &'a Tensor<T>)>, p: &str, c: &'a ConvParams<T>) {
    out.push((format!("{p}.weight"), ParamKind::Trainable, &c.weight));
    out.push((format!("{p}.bias"), ParamKind::Trainable, &c.bias));
}

fn push_bn<'a, T>(out: &mut Vec<(String, ParamKind, &'a Tensor<T>)>, p: &str, b: &'a BatchNormState<T>) {
    out.push((format!("{p}.gamma"), ParamKind::Trainable, &b.gamma));
    out.push((format!("{p}.beta"), ParamKind::Trainable, &b.beta));
    out.push((format!("{p}.running_mean"), ParamKind::RunningStat, &b.running_mean));
    out.push((format!("{p}.running_var"), ParamKind::RunningStat, &b.running_var));
}

fn push_conv_mut<'a, T>(out: &mut Vec<(String, ParamKind, &'a mut Tensor<T>)>, p: &str, c: &'a mut ConvParams<T>) {
    out.push((format!("{p}.weight"), ParamKind::Trainable, &mut c.weight));
    out.push((format!("{p}.bias"), ParamKind::Trainable, &mut c.bias));
}

fn push_bn_mut<'a, T>(out: &mut Vec<(String, ParamKind, &'a mut Tensor<T>)>, p: &str, b: &'a mut BatchNormState<T>) {
    out.push((format!("{p}.gamma"), ParamKind::Trainable, &mut b.gamma));
    out.push((format!("{p}.beta"), ParamKind::Trainable, &mut b.beta));
    out.push((format!("{p}.running_mean"), ParamKind::RunningStat, &mut b.running_mean));
    out.push((format!("{p}.running_var"), ParamKind::RunningStat, &mut b.running_var));
}

/// One decoder level: upsample, concatenate the skip, refine.
#[derive(Debug, Clone, PartialEq)]
pub struct UpStage<T = f32> {
    pub up: ConvParams<T>,
    pub block: ConvBlock<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNetModel<T = f32> {
    config: UNetConfig,
    encoders: Vec<ConvBlock<T>>,
    bottleneck: ConvBlock<T>,
    /// Ordered deepest level first, i.e. in execution order.
    decoders: Vec<UpStage<T>>,
    head: ConvParams<T>,
}

/// Activations retained by [`UNetModel::forward_train`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    input_shape: Shape,
    encoders: Vec<(ConvBlockCache<T>, PoolIndices)>,
    bottleneck: ConvBlockCache<T>,
    decoders: Vec<(Tensor<T>, ConvBlockCache<T>)>,
    head_input: Tensor<T>,
}

impl<T: Scalar> UNetModel<T> {
    /// Kaiming-normal conv weights (`std = sqrt(2 / fan_in)`), zero biases,
    /// identity batch norm. Identical `(config, seed)` gives an identical model.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.depth;
        let encoders = (0..d)
            .map(|i| {
                let in_c = if i == 0 { config.in_channels } else { config.width(i - 1) };
                ConvBlock::new(in_c, config.width(i), &mut rng)
            })
            .collect();
        let bottleneck = ConvBlock::new(config.width(d - 1), config.width(d), &mut rng);
        let decoders = (0..d)
            .rev()
            .map(|i| {
                let (from, to) = (config.width(i + 1), config.width(i));
                let w = kaiming(Shape::new(from, to, 2, 2), &mut rng);
                UpStage {
                    up: ConvParams::with_zero_bias(w, to, 2, 0).expect("valid up params"),
                    block: ConvBlock::new(2 * to, to, &mut rng),
                }
            })
            .collect();
        let head = conv_layer(config.width(0), config.out_channels, 1, 0, &mut rng);
        Ok(UNetModel {
            config,
            encoders,
            bottleneck,
            decoders,
            head,
        })
    }

    pub fn config(&self) -> UNetConfig {
        self.config
    }

    pub fn encoders(&self) -> &[ConvBlock<T>] {
        &self.encoders
    }

    pub fn bottleneck(&self) -> &ConvBlock<T> {
        &self.bottleneck
    }

    pub fn decoders(&self) -> &[UpStage<T>] {
        &self.decoders
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.c != self.config.in_channels {
            return Err(Error::dim(
                "unet_forward",
                format!("input has {} channels, model expects {}", s.c, self.config.in_channels),
            ));
        }
        let m = self.config.spatial_multiple();
        if s.h % m != 0 || s.w % m != 0 {
            return Err(Error::dim(
                "unet_forward",
                format!("spatial dims {}x{} must be multiples of {m} (2^depth)", s.h, s.w),
            ));
        }
        Ok(())
    }

    /// Inference-mode forward returning logits `(n, out_channels, h, w)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x.clone();
        for enc in &self.encoders {
            let out = enc.forward(&h)?;
            h = maxpool2d(&out)?.0;
            skips.push(out);
        }
        h = self.bottleneck.forward(&h)?;
        for stage in &self.decoders {
            let up = conv_transpose2d(&h, &stage.up)?;
            let skip = skips.pop().expect("one skip per decoder");
            debug_assert_eq!((up.shape().h, up.shape().w), (skip.shape().h, skip.shape().w));
            h = stage.block.forward(&concat_channels(&up, &skip)?)?;
        }
        conv2d(&h, &self.head)
    }

    /// Training-mode forward: batch statistics, running stats updated.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.set_mode(Mode::Training);
        self.forward_cached(x)
    }

    /// Forward honoring the batch-norm modes currently set on the model.
    pub fn forward_cached(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut enc_caches = Vec::with_capacity(self.config.depth);
        let mut h = x.clone();
        for enc in &mut self.encoders {
            let (out, cache) = enc.forward_cached(&h)?;
            let (pooled, idx) = maxpool2d(&out)?;
            enc_caches.push((cache, idx));
            skips.push(out);
            h = pooled;
        }
        let (b, bottleneck) = self.bottleneck.forward_cached(&h)?;
        h = b;
        let mut dec_caches = Vec::with_capacity(self.config.depth);
        for stage in &mut self.decoders {
            let up = conv_transpose2d(&h, &stage.up)?;
            let skip = skips.pop().expect("one skip per decoder");
            let (out, cache) = stage.block.forward_cached(&concat_channels(&up, &skip)?)?;
            dec_caches.push((h, cache));
            h = out;
        }
        let logits = conv2d(&h, &self.head)?;
        Ok((
            logits,
            ForwardCache {
                input_shape: x.shape(),
                encoders: enc_caches,
                bottleneck,
                decoders: dec_caches,
                head_input: h,
            },
        ))
    }

    /// Accumulates parameter gradients for `d loss / d logits = grad_logits`
    /// and returns the input gradient.
    pub fn backward(&mut self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = conv2d_backward(&cache.head_input, &mut self.head, grad_logits)?;
        let mut skip_grads = Vec::with_capacity(self.config.depth);
        for (stage, (up_input, block_cache)) in self.decoders.iter_mut().zip(&cache.decoders).rev() {
            let gcat = stage.block.backward(block_cache, &g)?;
            let up_c = stage.up.weight.shape().c;
            let (gup, gskip) = split_channels(&gcat, up_c)?;
            skip_grads.push(gskip);
            g = conv_transpose2d_backward(up_input, &mut stage.up, &gup)?;
        }
        // skip_grads now runs shallowest level first
        g = self.bottleneck.backward(&cache.bottleneck, &g)?;
        for ((enc, (block_cache, idx)), gskip) in self
            .encoders
            .iter_mut()
            .zip(&cache.encoders)
            .zip(&skip_grads)
            .rev()
        {
            let mut gout = maxpool2d_backward(idx, &g)?;
            for (a, &b) in gout.data_mut().iter_mut().zip(gskip.data()) {
                *a += b;
            }
            g = enc.backward(block_cache, &gout)?;
        }
        debug_assert_eq!(g.shape(), cache.input_shape);
        Ok(g)
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for e in &mut self.encoders {
            e.set_mode(mode);
        }
        self.bottleneck.set_mode(mode);
        for d in &mut self.decoders {
            d.block.set_mode(mode);
        }
    }

    /// All tensors in a stable order with unique dotted names.
    pub fn named_tensors(&self) -> Vec<(String, ParamKind, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, e) in self.encoders.iter().enumerate() {
            e.tensors(&format!("enc{i}"), &mut out);
        }
        self.bottleneck.tensors("bottleneck", &mut out);
        let d = self.config.depth;
        for (k, stage) in self.decoders.iter().enumerate() {
            let level = d - 1 - k;
            push_conv(&mut out, &format!("up{level}"), &stage.up);
            stage.block.tensors(&format!("dec{level}"), &mut out);
        }
        push_conv(&mut out, "head", &self.head);
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, ParamKind, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, e) in self.encoders.iter_mut().enumerate() {
            e.tensors_mut(&format!("enc{i}"), &mut out);
        }
        self.bottleneck.tensors_mut("bottleneck", &mut out);
        let d = self.config.depth;
        for (k, stage) in self.decoders.iter_mut().enumerate() {
            let level = d - 1 - k;
            push_conv_mut(&mut out, &format!("up{level}"), &mut stage.up);
            stage.block.tensors_mut(&format!("dec{level}"), &mut out);
        }
        push_conv_mut(&mut out, "head", &mut self.head);
        out
    }

    /// Trainable tensors only, in [`Self::named_tensors`] order.
    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.named_tensors_mut()
            .into_iter()
            .filter(|(_, k, _)| *k == ParamKind::Trainable)
            .map(|(n, _, t)| (n, t))
            .collect()
    }

    /// Scalar count over trainable tensors (running statistics excluded).
    pub fn param_count(&self) -> usize {
        self.named_tensors()
            .iter()
            .filter(|(_, k, _)| *k == ParamKind::Trainable)
            .map(|(_, _, t)| t.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, t) in self.parameters_mut() {
            t.zero_grad();
        }
    }

    /// Converts every tensor to another element type (e.g. `f64` for gradient checks).
    pub fn cast<U: Scalar>(&self) -> UNetModel<U> {
        let conv = |c: &ConvParams<T>| ConvParams {
            weight: c.weight.cast(),
            bias: c.bias.cast(),
            stride: c.stride,
            padding: c.padding,
        };
        let bn = |b: &BatchNormState<T>| BatchNormState {
            gamma: b.gamma.cast(),
            beta: b.beta.cast(),
            running_mean: b.running_mean.cast(),
            running_var: b.running_var.cast(),
            eps: b.eps,
            momentum: b.momentum,
            mode: b.mode,
        };
        let block = |b: &ConvBlock<T>| ConvBlock {
            conv1: conv(&b.conv1),
            bn1: bn(&b.bn1),
            conv2: conv(&b.conv2),
            bn2: bn(&b.bn2),
        };
        UNetModel {
            config: self.config,
            encoders: self.encoders.iter().map(block).collect(),
            bottleneck: block(&self.bottleneck),
            decoders: self
                .decoders
                .iter()
                .map(|s| UpStage {
                    up: conv(&s.up),
                    block: block(&s.block),
                })
                .collect(),
            head: conv(&self.head),
        }
    }
}

/// Logits to probabilities.
pub fn predict_probabilities<T: Scalar>(model: &UNetModel<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(ops::sigmoid(&model.forward(x)?))
}
