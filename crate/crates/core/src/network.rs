//! Declarative network specs, their instantiated parameters, and whole-network
//! forward/backward passes.
//!
//! Every network here is a chain of blocks: `Conv→ReLU`, then any number of
//! `Conv→BN→ReLU`, then a lone `Conv`. [`NetworkSpec`] keeps the flat layer
//! list; [`Network`] groups it into blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    batchnorm_forward_inference, bn_relu_backward, bn_relu_forward_train, conv2d_backward_with,
    conv2d_forward, relu_backward, BatchNormState, BnCache, Mode,
};
use crate::tensor::{Dims, Real, Tensor4};

/// Feature-map width used by every network in this crate.
pub const FEATURES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel_size,
        }
    }

    /// Same-size padding of a conv layer; 0 for other kinds.
    pub fn padding(&self) -> usize {
        match *self {
            LayerSpec::Conv { kernel_size, .. } => (kernel_size - 1) / 2,
            _ => 0,
        }
    }
}

/// What the network output represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MappingMode {
    /// Output is the clean signal (or a frequency component of it).
    Direct,
    /// Output is the noise; the denoised image is `noisy − output`.
    Residual,
}

impl std::fmt::Display for MappingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MappingMode::Direct => "direct",
            MappingMode::Residual => "residual",
        })
    }
}

impl std::str::FromStr for MappingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(MappingMode::Direct),
            "residual" => Ok(MappingMode::Residual),
            other => Err(Error::config(format!("unknown mapping mode {other:?} (direct|residual)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub mapping_mode: MappingMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
}

impl NetworkSpec {
    /// A DnCNN-style stack of `depth` conv layers with 64 feature maps. The
    /// first conv uses `first_kernel`, the rest 3×3.
    pub fn dncnn(
        name: impl Into<String>,
        depth: usize,
        first_kernel: usize,
        mapping_mode: MappingMode,
    ) -> Result<Self> {
        Self::dncnn_with_width(name, depth, first_kernel, FEATURES, mapping_mode)
    }

    /// [`NetworkSpec::dncnn`] with `features` hidden channels.
    pub fn dncnn_with_width(
        name: impl Into<String>,
        depth: usize,
        first_kernel: usize,
        features: usize,
        mapping_mode: MappingMode,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::config("network depth must be at least 1"));
        }
        if features == 0 {
            return Err(Error::config("feature count must be at least 1"));
        }
        let mut layers = Vec::with_capacity(3 * depth);
        if depth == 1 {
            layers.push(LayerSpec::conv(1, 1, first_kernel));
        } else {
            layers.push(LayerSpec::conv(1, features, first_kernel));
            layers.push(LayerSpec::Relu);
            for _ in 0..depth - 2 {
                layers.push(LayerSpec::conv(features, features, 3));
                layers.push(LayerSpec::BatchNorm { channels: features });
                layers.push(LayerSpec::Relu);
            }
            layers.push(LayerSpec::conv(features, 1, 3));
        }
        let spec = NetworkSpec {
            name: name.into(),
            layers,
            mapping_mode,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Low-frequency network: 17 convs, 5×5 first layer, direct mapping.
    pub fn low_freq() -> Self {
        Self::dncnn("LowFreqNet", 17, 5, MappingMode::Direct).expect("canonical spec")
    }

    /// High-frequency network: 20 convs, all 3×3, direct mapping.
    pub fn high_freq() -> Self {
        Self::dncnn("HighFreqNet", 20, 3, MappingMode::Direct).expect("canonical spec")
    }

    /// Single-network DnCNN-S baseline: 17 convs, all 3×3, residual mapping.
    pub fn baseline_dncnn_s() -> Self {
        Self::dncnn("BaselineDnCNN_S", 17, 3, MappingMode::Residual).expect("canonical spec")
    }

    /// Same family with a different conv count (first kernel, width and mapping kept).
    pub fn with_depth(&self, depth: usize) -> Result<Self> {
        let first = self
            .convs()
            .next()
            .ok_or_else(|| Error::config("spec has no conv layers"))?;
        let features = if first.out_channels == 1 { FEATURES } else { first.out_channels };
        Self::dncnn_with_width(self.name.clone(), depth, first.kernel_size, features, self.mapping_mode)
    }

    pub fn with_mapping(mut self, mapping_mode: MappingMode) -> Self {
        self.mapping_mode = mapping_mode;
        self
    }

    pub fn convs(&self) -> impl Iterator<Item = ConvShape> + '_ {
        self.layers.iter().filter_map(|l| match *l {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_size,
            } => Some(ConvShape {
                in_channels,
                out_channels,
                kernel_size,
            }),
            _ => None,
        })
    }

    pub fn conv_count(&self) -> usize {
        self.convs().count()
    }

    pub fn batchnorm_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::BatchNorm { .. }))
            .count()
    }

    pub fn output_channels(&self) -> usize {
        self.convs().last().map_or(0, |c| c.out_channels)
    }

    /// Checks the block structure, channel chaining and kernel sizes.
    pub fn validate(&self) -> Result<()> {
        self.blocks().map(|_| ())
    }

    fn blocks(&self) -> Result<Vec<BlockSpec>> {
        let bad = |i: usize, msg: String| Error::config(format!("{}: layer {i}: {msg}", self.name));
        let mut blocks = Vec::new();
        let mut i = 0;
        while i < self.layers.len() {
            let conv = match self.layers[i] {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel_size,
                } => ConvShape {
                    in_channels,
                    out_channels,
                    kernel_size,
                },
                other => return Err(bad(i, format!("expected Conv, found {other:?}"))),
            };
            if conv.kernel_size % 2 == 0 || conv.kernel_size == 0 {
                return Err(bad(i, format!("kernel size {} must be odd", conv.kernel_size)));
            }
            if conv.in_channels == 0 || conv.out_channels == 0 {
                return Err(bad(i, "zero channel count".into()));
            }
            let start = i;
            i += 1;
            let mut bn = false;
            if let Some(LayerSpec::BatchNorm { channels }) = self.layers.get(i) {
                if *channels != conv.out_channels {
                    return Err(bad(
                        i,
                        format!("BatchNorm over {channels} channels after a {}-channel conv", conv.out_channels),
                    ));
                }
                bn = true;
                i += 1;
            }
            let mut relu = false;
            if let Some(LayerSpec::Relu) = self.layers.get(i) {
                relu = true;
                i += 1;
            }
            blocks.push(BlockSpec {
                first_layer: start,
                conv,
                bn,
                relu,
            });
        }
        let Some(last) = blocks.last() else {
            return Err(Error::config(format!("{}: network has no layers", self.name)));
        };
        if last.bn || last.relu {
            return Err(bad(last.first_layer, "last block must be a lone Conv".into()));
        }
        let n = blocks.len();
        for (b, blk) in blocks.iter().enumerate() {
            if b == 0 && n > 1 && (blk.bn || !blk.relu) {
                return Err(bad(blk.first_layer, "first block must be Conv→ReLU".into()));
            }
            if b > 0 && b + 1 < n && !(blk.bn && blk.relu) {
                return Err(bad(blk.first_layer, "intermediate block must be Conv→BN→ReLU".into()));
            }
            let expected_in = if b == 0 { 1 } else { blocks[b - 1].conv.out_channels };
            if blk.conv.in_channels != expected_in {
                return Err(bad(
                    blk.first_layer,
                    format!("conv expects {} input channels, previous layer gives {expected_in}", blk.conv.in_channels),
                ));
            }
        }
        if last.conv.out_channels != 1 {
            return Err(bad(last.first_layer, "networks must end in a single channel".into()));
        }
        Ok(blocks)
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockSpec {
    first_layer: usize,
    conv: ConvShape,
    bn: bool,
    relu: bool,
}

/// Learnable parameter count: conv weights and biases plus BN gamma/beta.
/// Running statistics are not counted.
pub fn parameter_count(spec: &NetworkSpec) -> usize {
    spec.layers
        .iter()
        .map(|l| match *l {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_size,
            } => out_channels * in_channels * kernel_size * kernel_size + out_channels,
            LayerSpec::BatchNorm { channels } => 2 * channels,
            LayerSpec::Relu => 0,
        })
        .sum()
}

/// Receptive field of a stride-1 conv stack: `1 + Σ (k − 1)`.
pub fn receptive_field(spec: &NetworkSpec) -> usize {
    1 + spec.convs().map(|c| c.kernel_size - 1).sum::<usize>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T: Real> {
    /// `(out_ch, in_ch, k, k)`.
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T: Real> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub state: BatchNormState<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T: Real> {
    first_layer: usize,
    pub conv: ConvParams<T>,
    pub bn: Option<BatchNormParams<T>>,
    pub relu: bool,
}

impl<T: Real> Block<T> {
    fn padding(&self) -> usize {
        (self.conv.weight.dims().h - 1) / 2
    }

    /// Spec index of the BN layer, for error reporting.
    fn bn_layer(&self) -> usize {
        self.first_layer + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    BnGamma,
    BnBeta,
}

impl ParamKind {
    /// Weight decay applies to conv weights only.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::ConvWeight)
    }
}

pub struct ParamMut<'a, T> {
    pub kind: ParamKind,
    pub values: &'a mut [T],
}

/// Parameter gradients in the order given by [`Network::params_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Real> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .map(|v| {
                let v = v.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Activations kept by [`Network::forward_train`] for [`Network::backward`].
///
/// Conv inputs that follow a BN block are not stored; they are recomputed
/// from the normalized activations during the backward pass.
pub struct Trace<T: Real> {
    conv_inputs: Vec<Option<Tensor4<T>>>,
    bn: Vec<Option<BnCache<T>>>,
    output_dims: Dims,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Real = f32> {
    spec: NetworkSpec,
    blocks: Vec<Block<T>>,
    mode: Mode,
}

impl<T: Real> Network<T> {
    /// He-normal conv weights (variance `2/fan_in`), zero biases, identity BN.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = spec
            .blocks()?
            .into_iter()
            .map(|b| {
                let c = b.conv;
                let fan_in = c.in_channels * c.kernel_size * c.kernel_size;
                let std = (2.0 / fan_in as f64).sqrt();
                let dims = Dims::new(c.out_channels, c.in_channels, c.kernel_size, c.kernel_size);
                let weight: Vec<T> = (0..dims.len())
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        T::from_f64(z * std)
                    })
                    .collect();
                Block {
                    first_layer: b.first_layer,
                    conv: ConvParams {
                        weight: Tensor4::from_vec(dims, weight).expect("length matches dims"),
                        bias: vec![T::zero(); c.out_channels],
                    },
                    bn: b.bn.then(|| BatchNormParams {
                        gamma: vec![T::one(); c.out_channels],
                        beta: vec![T::zero(); c.out_channels],
                        state: BatchNormState::new(c.out_channels),
                    }),
                    relu: b.relu,
                }
            })
            .collect();
        Ok(Network {
            spec: spec.clone(),
            blocks,
            mode: Mode::Train,
        })
    }

    /// Assembles a network from explicit parameters (checkpoint loading, stubs).
    pub fn from_blocks(spec: &NetworkSpec, blocks: Vec<(ConvParams<T>, Option<BatchNormParams<T>>)>) -> Result<Self> {
        let layout = spec.blocks()?;
        if layout.len() != blocks.len() {
            return Err(Error::config(format!(
                "{}: spec has {} blocks, parameters for {}",
                spec.name,
                layout.len(),
                blocks.len()
            )));
        }
        let blocks = layout
            .into_iter()
            .zip(blocks)
            .map(|(b, (conv, bn))| {
                let c = b.conv;
                let want = Dims::new(c.out_channels, c.in_channels, c.kernel_size, c.kernel_size);
                if conv.weight.dims() != want || conv.bias.len() != c.out_channels {
                    return Err(Error::config(format!(
                        "layer {}: conv parameters {} / {} do not match spec {want}",
                        b.first_layer,
                        conv.weight.dims(),
                        conv.bias.len()
                    )));
                }
                if b.bn != bn.is_some() {
                    return Err(Error::config(format!("layer {}: BN presence differs from spec", b.first_layer)));
                }
                if let Some(p) = &bn {
                    let ch = c.out_channels;
                    if p.gamma.len() != ch || p.beta.len() != ch || p.state.channels() != ch || p.state.running_var.len() != ch {
                        return Err(Error::config(format!("layer {}: BN parameter lengths do not match {ch} channels", b.first_layer + 1)));
                    }
                    if p.state.running_var.iter().any(|v| *v < T::zero()) {
                        return Err(Error::config(format!("layer {}: negative running variance", b.first_layer + 1)));
                    }
                }
                Ok(Block {
                    first_layer: b.first_layer,
                    conv,
                    bn,
                    relu: b.relu,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Network {
            spec: spec.clone(),
            blocks,
            mode: Mode::Inference,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block<T>] {
        &mut self.blocks
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn mapping_mode(&self) -> MappingMode {
        self.spec.mapping_mode
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.spec)
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(&self.spec)
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let conv_vec = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect::<Vec<U>>();
        Network {
            spec: self.spec.clone(),
            mode: self.mode,
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    first_layer: b.first_layer,
                    conv: ConvParams {
                        weight: b.conv.weight.cast(),
                        bias: conv_vec(&b.conv.bias),
                    },
                    bn: b.bn.as_ref().map(|p| BatchNormParams {
                        gamma: conv_vec(&p.gamma),
                        beta: conv_vec(&p.beta),
                        state: BatchNormState {
                            running_mean: conv_vec(&p.state.running_mean),
                            running_var: conv_vec(&p.state.running_var),
                            epsilon: p.state.epsilon,
                            momentum: p.state.momentum,
                        },
                    }),
                    relu: b.relu,
                })
                .collect(),
        }
    }

    fn check_input(&self, input: &Tensor4<T>) -> Result<()> {
        let d = input.dims();
        if d.c != 1 {
            return Err(Error::config(format!(
                "{}: input must have 1 channel, got {}",
                self.spec.name, d.c
            ))
            .at_layer(0));
        }
        Ok(())
    }

    /// Inference-mode forward. Never mutates the network.
    pub fn infer(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(input)?;
        let mut x: Option<Tensor4<T>> = None;
        for b in &self.blocks {
            let src = x.as_ref().unwrap_or(input);
            let mut y = conv2d_forward(src, &b.conv.weight, &b.conv.bias, b.padding())
                .map_err(|e| e.at_layer(b.first_layer))?;
            if let Some(p) = &b.bn {
                y = batchnorm_forward_inference(&y, &p.gamma, &p.beta, &p.state)
                    .map_err(|e| e.at_layer(b.bn_layer()))?;
            }
            if b.relu {
                relu_in_place(&mut y);
            }
            x = Some(y);
        }
        Ok(x.expect("network has at least one block"))
    }

    /// Forward in the current mode. Train mode uses batch statistics and
    /// updates the BN running averages.
    pub fn forward(&mut self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self.mode {
            Mode::Inference => self.infer(input),
            Mode::Train => self.forward_train(input).map(|(y, _)| y),
        }
    }

    /// Train-mode forward that also returns the activations needed by
    /// [`Network::backward`].
    pub fn forward_train(&mut self, input: &Tensor4<T>) -> Result<(Tensor4<T>, Trace<T>)> {
        self.check_input(input)?;
        let nb = self.blocks.len();
        let mut conv_inputs: Vec<Option<Tensor4<T>>> = vec![None; nb];
        let mut bn_caches: Vec<Option<BnCache<T>>> = vec![None; nb];
        conv_inputs[0] = Some(input.clone());
        let mut x: Option<Tensor4<T>> = None;
        for i in 0..nb {
            let b = &mut self.blocks[i];
            let src = x.as_ref().unwrap_or(input);
            let pad = b.padding();
            let mut y = conv2d_forward(src, &b.conv.weight, &b.conv.bias, pad)
                .map_err(|e| e.at_layer(b.first_layer))?;
            let layer = b.bn_layer();
            if let Some(p) = b.bn.as_mut() {
                let (out, cache) = bn_relu_forward_train(&y, &p.gamma, &p.beta, &mut p.state, b.relu)
                    .map_err(|e| e.at_layer(layer))?;
                y = out;
                bn_caches[i] = Some(cache);
            } else if b.relu {
                relu_in_place(&mut y);
            }
            if i + 1 < nb && b.bn.is_none() {
                conv_inputs[i + 1] = Some(y.clone());
            }
            x = Some(y);
        }
        let out = x.expect("network has at least one block");
        let output_dims = out.dims();
        Ok((
            out,
            Trace {
                conv_inputs,
                bn: bn_caches,
                output_dims,
            },
        ))
    }

    /// Output of block `i` rebuilt from its BN cache: `relu?(γ·x̂ + β)`.
    fn block_output_from_cache(&self, i: usize, trace: &Trace<T>) -> Tensor4<T> {
        let b = &self.blocks[i];
        let p = b.bn.as_ref().expect("recompute requires a BN block");
        let cache = trace.bn[i].as_ref().expect("BN cache present");
        let d = cache.xhat.dims();
        let plane = d.plane_len();
        let mut y = cache.xhat.clone();
        for (j, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
            let c = j % d.c;
            let (g, be) = (p.gamma[c], p.beta[c]);
            for v in chunk {
                let t = g * *v + be;
                *v = if b.relu && t <= T::zero() { T::zero() } else { t };
            }
        }
        y
    }

    fn conv_input(&self, i: usize, trace: &Trace<T>) -> Tensor4<T> {
        match &trace.conv_inputs[i] {
            Some(t) => t.clone(),
            None => self.block_output_from_cache(i - 1, trace),
        }
    }

    /// Gradients of `Σ upstream ⊙ output` for every learnable parameter.
    pub fn backward(&self, trace: &Trace<T>, upstream: &Tensor4<T>) -> Result<Gradients<T>> {
        if upstream.dims() != trace.output_dims {
            return Err(Error::shape(
                "Network::backward",
                format!("upstream {} vs output {}", upstream.dims(), trace.output_dims),
            ));
        }
        let nb = self.blocks.len();
        let mut per_block: Vec<Vec<Vec<T>>> = Vec::with_capacity(nb);
        let mut grad = upstream.clone();
        // Output of block i, i.e. the input of block i + 1.
        let mut block_out: Option<Tensor4<T>> = None;
        for i in (0..nb).rev() {
            let b = &self.blocks[i];
            if b.relu && b.bn.is_none() {
                let out = block_out
                    .as_ref()
                    .expect("only non-final blocks carry a ReLU");
                // out > 0 exactly where the ReLU input was > 0.
                grad = relu_backward(out, &grad).map_err(|e| e.at_layer(b.first_layer + 1 + usize::from(b.bn.is_some())))?;
            }
            let mut tensors = Vec::with_capacity(4);
            let mut bn_grads = None;
            if let Some(p) = &b.bn {
                let cache = trace.bn[i].as_ref().expect("BN cache present");
                let beta = b.relu.then_some(p.beta.as_slice());
                let g = bn_relu_backward(&grad, cache, &p.gamma, beta).map_err(|e| e.at_layer(b.bn_layer()))?;
                grad = g.input;
                bn_grads = Some((g.gamma, g.beta));
            }
            let x = self.conv_input(i, trace);
            let cg = conv2d_backward_with(&x, &b.conv.weight, &grad, b.padding(), i > 0)
                .map_err(|e| e.at_layer(b.first_layer))?;
            tensors.push(cg.weight.into_vec());
            tensors.push(cg.bias);
            if let Some((g, be)) = bn_grads {
                tensors.push(g);
                tensors.push(be);
            }
            per_block.push(tensors);
            if let Some(gi) = cg.input {
                grad = gi;
            }
            block_out = Some(x);
        }
        per_block.reverse();
        Ok(Gradients {
            tensors: per_block.into_iter().flatten().collect(),
        })
    }

    /// Mutable views of every learnable parameter, in layer order:
    /// per block conv weight, conv bias, then BN gamma and beta.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(ParamMut {
                kind: ParamKind::ConvWeight,
                values: b.conv.weight.data_mut(),
            });
            out.push(ParamMut {
                kind: ParamKind::ConvBias,
                values: &mut b.conv.bias,
            });
            if let Some(p) = &mut b.bn {
                out.push(ParamMut {
                    kind: ParamKind::BnGamma,
                    values: &mut p.gamma,
                });
                out.push(ParamMut {
                    kind: ParamKind::BnBeta,
                    values: &mut p.beta,
                });
            }
        }
        out
    }

    /// Flat copy of all learnable parameters in [`Network::params_mut`] order.
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for b in &self.blocks {
            out.extend_from_slice(b.conv.weight.data());
            out.extend_from_slice(&b.conv.bias);
            if let Some(p) = &b.bn {
                out.extend_from_slice(&p.gamma);
                out.extend_from_slice(&p.beta);
            }
        }
        out
    }
}

fn relu_in_place<T: Real>(t: &mut Tensor4<T>) {
    for v in t.data_mut() {
        if *v <= T::zero() {
            *v = T::zero();
        }
    }
}
