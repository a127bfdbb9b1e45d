//! Network descriptions: an ordered list of layers over a chain of nodes.
//!
//! Node 0 is the network input and node `i + 1` is the output of layer `i`.
//! Every layer consumes the previous node; a skip fusion additionally reads
//! an earlier node named by index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuseMode {
    /// `current + conv1x1(source)`, the projection mapping source channels
    /// onto the current ones.
    AddAfter1x1,
    /// `current + source`; channel counts must agree.
    Add,
    /// Channel concatenation `[current, source]`.
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum LayerSpec {
    /// Zero-padded "same" convolution; `k` must be odd.
    Conv { k: usize, out_ch: usize, stride: usize },
    BatchNorm,
    Relu,
    MaxPool2,
    /// Fractionally strided convolution with padding `(k - stride) / 2`.
    TransposedConv { k: usize, out_ch: usize, stride: usize },
    SkipFuse { source: usize, mode: FuseMode },
    SigmoidHead,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::BatchNorm => "batch_norm",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2 => "maxpool2",
            LayerSpec::TransposedConv { .. } => "transposed_conv",
            LayerSpec::SkipFuse { .. } => "skip_fuse",
            LayerSpec::SigmoidHead => "sigmoid_head",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    MiniFcn,
    MiniResUnet,
}

impl Preset {
    pub fn build(self) -> ModelSpec {
        match self {
            Preset::MiniFcn => ModelSpec::mini_fcn(),
            Preset::MiniResUnet => ModelSpec::mini_res_unet(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::MiniFcn => "mini_fcn",
            Preset::MiniResUnet => "mini_res_unet",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub in_channels: usize,
    pub layers: Vec<LayerSpec>,
}

/// Shape of one parameter tensor and whether the optimizer updates it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Channel counts and parameter indices resolved from a spec.
#[derive(Debug, Clone)]
pub struct Plan {
    /// Channels of every node, input included.
    pub channels: Vec<usize>,
    /// For each layer, indices of its parameter tensors in declaration order.
    pub params: Vec<Vec<usize>>,
    pub slots: Vec<ParamSlot>,
}

pub(crate) fn tconv_pad(k: usize, stride: usize) -> usize {
    (k - stride) / 2
}

/// Incremental construction of a spec, returning node ids as layers are added.
pub struct SpecBuilder {
    layers: Vec<LayerSpec>,
    channels: Vec<usize>,
}

impl SpecBuilder {
    pub fn new(in_channels: usize) -> Self {
        Self {
            layers: Vec::new(),
            channels: vec![in_channels],
        }
    }

    /// Id of the most recent node.
    pub fn head(&self) -> usize {
        self.layers.len()
    }

    pub fn channels(&self, node: usize) -> usize {
        self.channels[node]
    }

    pub fn push(&mut self, layer: LayerSpec) -> usize {
        let cur = *self.channels.last().expect("input node");
        let out = match layer {
            LayerSpec::Conv { out_ch, .. } | LayerSpec::TransposedConv { out_ch, .. } => out_ch,
            LayerSpec::SkipFuse {
                source,
                mode: FuseMode::Concat,
            } => cur + self.channels[source],
            _ => cur,
        };
        self.layers.push(layer);
        self.channels.push(out);
        self.head()
    }

    pub fn conv(&mut self, k: usize, out_ch: usize) -> usize {
        self.push(LayerSpec::Conv { k, out_ch, stride: 1 })
    }

    pub fn conv_bn_relu(&mut self, out_ch: usize) -> usize {
        self.conv(3, out_ch);
        self.push(LayerSpec::BatchNorm);
        self.push(LayerSpec::Relu)
    }

    pub fn up(&mut self, out_ch: usize) -> usize {
        self.push(LayerSpec::TransposedConv {
            k: 4,
            out_ch,
            stride: 2,
        });
        self.push(LayerSpec::BatchNorm)
    }

    /// Pre-activation residual unit: `x + conv(relu(bn(conv(relu(bn(x))))))`,
    /// with a 1x1 projection on the shortcut when channels change.
    pub fn residual_unit(&mut self, out_ch: usize) -> usize {
        let input = self.head();
        let mode = if self.channels[input] == out_ch {
            FuseMode::Add
        } else {
            FuseMode::AddAfter1x1
        };
        self.push(LayerSpec::BatchNorm);
        self.push(LayerSpec::Relu);
        self.conv(3, out_ch);
        self.push(LayerSpec::BatchNorm);
        self.push(LayerSpec::Relu);
        self.conv(3, out_ch);
        self.push(LayerSpec::SkipFuse {
            source: input,
            mode,
        })
    }

    pub fn finish(self, name: &str) -> ModelSpec {
        ModelSpec {
            name: name.to_string(),
            in_channels: self.channels[0],
            layers: self.layers,
        }
    }
}

impl ModelSpec {
    /// FCN-8s in miniature: three VGG-style down blocks (16/32/64), a
    /// bottleneck scoring into 16 channels, and two stride-2 upsamplings each
    /// fused with a 1x1 projection of an encoder block. A final stride-2
    /// upsampling restores full resolution.
    pub fn mini_fcn() -> Self {
        let mut b = SpecBuilder::new(1);
        let mut pools = Vec::new();
        for width in [16, 32, 64] {
            b.conv_bn_relu(width);
            b.conv_bn_relu(width);
            pools.push(b.push(LayerSpec::MaxPool2));
        }
        b.conv_bn_relu(64);
        b.conv(1, 16);
        b.up(16);
        b.push(LayerSpec::SkipFuse {
            source: pools[1],
            mode: FuseMode::AddAfter1x1,
        });
        b.up(16);
        b.push(LayerSpec::SkipFuse {
            source: pools[0],
            mode: FuseMode::AddAfter1x1,
        });
        b.up(16);
        b.push(LayerSpec::Relu);
        b.conv(3, 1);
        b.push(LayerSpec::SigmoidHead);
        b.finish(Preset::MiniFcn.name())
    }

    /// Symmetric three-level residual U-Net (16/32/64) with a residual
    /// bridge and one concatenation per resolution level.
    pub fn mini_res_unet() -> Self {
        let mut b = SpecBuilder::new(1);
        b.conv(3, 16);
        let e1 = b.residual_unit(16);
        b.push(LayerSpec::MaxPool2);
        let e2 = b.residual_unit(32);
        b.push(LayerSpec::MaxPool2);
        let e3 = b.residual_unit(64);
        b.push(LayerSpec::MaxPool2);
        b.residual_unit(64);
        for (skip, width) in [(e3, 64), (e2, 32), (e1, 16)] {
            b.up(width);
            b.push(LayerSpec::SkipFuse {
                source: skip,
                mode: FuseMode::Concat,
            });
            b.residual_unit(width);
        }
        b.conv(1, 1);
        b.push(LayerSpec::SigmoidHead);
        b.finish(Preset::MiniResUnet.name())
    }

    pub fn skip_count(&self, mode: FuseMode) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::SkipFuse { mode: m, .. } if *m == mode))
            .count()
    }

    /// Resolves channels and parameter slots, checking structural validity.
    pub fn plan(&self) -> Result<Plan> {
        if self.in_channels == 0 {
            return Err(Error::Structural("input must have at least one channel".into()));
        }
        let mut channels = vec![self.in_channels];
        let mut params = Vec::with_capacity(self.layers.len());
        let mut slots: Vec<ParamSlot> = Vec::new();
        let add = |slots: &mut Vec<ParamSlot>, name: String, shape: Vec<usize>, trainable: bool| {
            slots.push(ParamSlot {
                name,
                shape,
                trainable,
            });
            slots.len() - 1
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = channels[i];
            let tag = |what: &str| format!("layer{i}.{what}");
            let (out, idx) = match *layer {
                LayerSpec::Conv { k, out_ch, stride } => {
                    if k % 2 == 0 || stride == 0 || out_ch == 0 {
                        return Err(Error::Structural(format!(
                            "layer {i} (conv): needs odd k, positive stride and channels"
                        )));
                    }
                    let w = add(&mut slots, tag("weight"), vec![out_ch, cur, k, k], true);
                    let b = add(&mut slots, tag("bias"), vec![out_ch], true);
                    (out_ch, vec![w, b])
                }
                LayerSpec::TransposedConv { k, out_ch, stride } => {
                    if stride == 0 || k < stride || (k - stride) % 2 != 0 || out_ch == 0 {
                        return Err(Error::Structural(format!(
                            "layer {i} (transposed_conv): needs k >= stride with k - stride even"
                        )));
                    }
                    let w = add(&mut slots, tag("weight"), vec![cur, out_ch, k, k], true);
                    let b = add(&mut slots, tag("bias"), vec![out_ch], true);
                    (out_ch, vec![w, b])
                }
                LayerSpec::BatchNorm => {
                    let g = add(&mut slots, tag("gamma"), vec![cur], true);
                    let b = add(&mut slots, tag("beta"), vec![cur], true);
                    let m = add(&mut slots, tag("running_mean"), vec![cur], false);
                    let v = add(&mut slots, tag("running_var"), vec![cur], false);
                    (cur, vec![g, b, m, v])
                }
                LayerSpec::Relu | LayerSpec::MaxPool2 | LayerSpec::SigmoidHead => (cur, vec![]),
                LayerSpec::SkipFuse { source, mode } => {
                    if source > i {
                        return Err(Error::Structural(format!(
                            "layer {i} (skip_fuse): source node {source} is not an earlier node"
                        )));
                    }
                    let src = channels[source];
                    match mode {
                        FuseMode::Add => {
                            if src != cur {
                                return Err(Error::Structural(format!(
                                    "layer {i} (skip_fuse add): {cur} vs {src} channels"
                                )));
                            }
                            (cur, vec![])
                        }
                        FuseMode::AddAfter1x1 => {
                            let w = add(&mut slots, tag("weight"), vec![cur, src, 1, 1], true);
                            let b = add(&mut slots, tag("bias"), vec![cur], true);
                            (cur, vec![w, b])
                        }
                        FuseMode::Concat => (cur + src, vec![]),
                    }
                }
            };
            channels.push(out);
            params.push(idx);
        }
        Ok(Plan {
            channels,
            params,
            slots,
        })
    }

    /// Spatial size of every node for an `h x w` input.
    pub fn trace(&self, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
        let mut dims = vec![(h, w)];
        for (i, layer) in self.layers.iter().enumerate() {
            let (ch, cw) = dims[i];
            let next = match *layer {
                LayerSpec::Conv { k, stride, .. } => {
                    let p = (k - 1) / 2;
                    ((ch + 2 * p - k) / stride + 1, (cw + 2 * p - k) / stride + 1)
                }
                LayerSpec::TransposedConv { k, stride, .. } => {
                    let p = tconv_pad(k, stride);
                    ((ch - 1) * stride + k - 2 * p, (cw - 1) * stride + k - 2 * p)
                }
                LayerSpec::MaxPool2 => {
                    if ch % 2 != 0 || cw % 2 != 0 || ch == 0 || cw == 0 {
                        return Err(Error::Shape(format!(
                            "layer {i} (maxpool2): input {ch}x{cw} is not divisible by 2"
                        )));
                    }
                    (ch / 2, cw / 2)
                }
                LayerSpec::SkipFuse { source, .. } => {
                    if dims[source] != (ch, cw) {
                        return Err(Error::Shape(format!(
                            "layer {i} (skip_fuse): source node {source} is {}x{}, current is {ch}x{cw}",
                            dims[source].0, dims[source].1
                        )));
                    }
                    (ch, cw)
                }
                _ => (ch, cw),
            };
            dims.push(next);
        }
        Ok(dims)
    }

    /// Product of the pooling and stride factors along the encoder.
    pub fn downsampling(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                LayerSpec::MaxPool2 => 2,
                LayerSpec::Conv { stride, .. } => stride,
                _ => 1,
            })
            .product()
    }

    /// Checks that an `h x w` input yields a one-channel map of the same size.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let f = self.downsampling();
        if h % f != 0 || w % f != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not divisible by the downsampling factor {f} of `{}`",
                self.name
            )));
        }
        let dims = self.trace(h, w)?;
        let out = *dims.last().expect("input node");
        if out != (h, w) {
            return Err(Error::Shape(format!(
                "`{}` maps {h}x{w} to {}x{}, not an identically-sized map",
                self.name, out.0, out.1
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<Plan> {
        let plan = self.plan()?;
        if *plan.channels.last().expect("input node") != 1 {
            return Err(Error::Structural("network must end in one channel".into()));
        }
        if self.layers.last() != Some(&LayerSpec::SigmoidHead) {
            return Err(Error::Structural("network must end with a sigmoid head".into()));
        }
        let f = self.downsampling();
        self.check_input(4 * f, 4 * f)?;
        Ok(plan)
    }
}
