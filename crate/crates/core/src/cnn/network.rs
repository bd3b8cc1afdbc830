//! V-net, G-net and R-net, transcribed row by row from their configuration
//! tables.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    init_param, Bottleneck, Conv2d, ConvBlock, Inception, InceptionWidths, InitRule, Linear, ParamMut, ParamRef, Pool,
};
use super::ops::{self, PoolMode};
use super::Tensor4;
use crate::error::{Error, Result};
use crate::features::PLANE_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NetworkKind {
    #[serde(rename = "VNet")]
    VNet,
    #[serde(rename = "GNet")]
    GNet,
    #[serde(rename = "RNet")]
    RNet,
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetworkKind::VNet => "VNet",
            NetworkKind::GNet => "GNet",
            NetworkKind::RNet => "RNet",
        })
    }
}

impl FromStr for NetworkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "vnet" | "v" => Ok(NetworkKind::VNet),
            "gnet" | "g" => Ok(NetworkKind::GNet),
            "rnet" | "r" => Ok(NetworkKind::RNet),
            _ => Err(Error::Config(format!("unknown network kind `{s}`"))),
        }
    }
}

/// G-net inception widths, modules 1 to 9.
pub const GNET_INCEPTION: [InceptionWidths; 9] = [
    InceptionWidths::new(64, 96, 128, 16, 32, 32),
    InceptionWidths::new(128, 128, 192, 32, 96, 64),
    InceptionWidths::new(192, 96, 208, 16, 48, 64),
    InceptionWidths::new(160, 112, 224, 24, 64, 64),
    InceptionWidths::new(128, 128, 256, 24, 64, 64),
    InceptionWidths::new(112, 144, 288, 32, 64, 64),
    InceptionWidths::new(256, 160, 320, 32, 128, 128),
    InceptionWidths::new(256, 160, 320, 32, 128, 128),
    InceptionWidths::new(384, 192, 384, 48, 128, 128),
];

/// R-net bottleneck sets: (reduce width, expanded width, blocks, first stride).
pub const RNET_SETS: [(usize, usize, usize, usize); 4] = [(16, 64, 3, 2), (32, 128, 4, 2), (64, 256, 6, 2), (128, 512, 3, 1)];

/// V-net conv widths per stage; every stage ends in a 2x2/2 max pool.
pub const VNET_STAGES: [(usize, usize); 5] = [(16, 2), (32, 2), (64, 3), (128, 3), (128, 3)];

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvBlock),
    MaxPool(Pool),
    AvgPool(Pool),
    Inception(Box<Inception>),
    BottleneckSet(Vec<Bottleneck>),
    Linear(Linear),
    Softmax,
}

impl Layer {
    /// Row label as it reads in the configuration tables.
    pub fn describe(&self) -> String {
        match self {
            Layer::Conv(b) => format!(
                "Conv+GroupNorm+ReLU {k}x{k}/{s}",
                k = b.conv.kernel,
                s = b.conv.stride
            ),
            Layer::MaxPool(p) => format!("MaxPool {k}x{k}/{s}", k = p.kernel, s = p.stride),
            Layer::AvgPool(p) => format!("AvgPool {k}x{k}/{s}", k = p.kernel, s = p.stride),
            Layer::Inception(_) => "Inception Module".into(),
            Layer::BottleneckSet(blocks) => format!("Bottleneck Block Set x{}", blocks.len()),
            Layer::Linear(l) if l.relu => "FullyConnected+ReLU".into(),
            Layer::Linear(_) => "FullyConnected".into(),
            Layer::Softmax => "Softmax".into(),
        }
    }

    fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        match self {
            Layer::Conv(b) => b.forward(x),
            Layer::MaxPool(p) | Layer::AvgPool(p) => p.forward(x),
            Layer::Inception(m) => m.forward(x),
            Layer::BottleneckSet(blocks) => {
                let mut y = blocks
                    .first()
                    .ok_or_else(|| Error::Config("empty bottleneck set".into()))?
                    .forward(x)?;
                for b in &blocks[1..] {
                    y = b.forward(&y)?;
                }
                Ok(y)
            }
            Layer::Linear(l) => l.forward(x),
            Layer::Softmax => {
                let (c, h, w) = x.sample_shape();
                let mut data = Vec::with_capacity(x.data().len());
                for n in 0..x.batch() {
                    let logits: Vec<f64> = x.sample(n).iter().map(|&v| v as f64).collect();
                    data.extend(ops::softmax(&logits).into_iter().map(|p| p as f32));
                }
                Tensor4::new([x.batch(), c, h, w], data)
            }
        }
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        match self {
            Layer::Conv(b) => b.params(prefix, out),
            Layer::Inception(m) => m.params(prefix, out),
            Layer::BottleneckSet(blocks) => {
                for (j, b) in blocks.iter().enumerate() {
                    b.params(&format!("{prefix}.block{j}"), out);
                }
            }
            Layer::Linear(l) => l.params(prefix, out),
            Layer::MaxPool(_) | Layer::AvgPool(_) | Layer::Softmax => {}
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(ParamMut<'a>, InitRule)>) {
        match self {
            Layer::Conv(b) => b.params_mut(prefix, out),
            Layer::Inception(m) => m.params_mut(prefix, out),
            Layer::BottleneckSet(blocks) => {
                for (j, b) in blocks.iter_mut().enumerate() {
                    b.params_mut(&format!("{prefix}.block{j}"), out);
                }
            }
            Layer::Linear(l) => l.params_mut(prefix, out),
            Layer::MaxPool(_) | Layer::AvgPool(_) | Layer::Softmax => {}
        }
    }
}

/// One row of the forward trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub name: String,
    /// `(C, H, W)` after this layer.
    pub shape: (usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Per sample `[p_cough, p_others]`.
    pub probabilities: Vec<[f64; 2]>,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedLayer {
    pub name: String,
    pub layer: Layer,
}

/// A binary classifier with its parameters. Immutable once built or loaded;
/// [`NetworkModel::forward`] takes `&self` and may run from many threads.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    kind: NetworkKind,
    in_channels: usize,
    layers: Vec<NamedLayer>,
}

fn conv_block(in_c: usize, out_c: usize, kernel: usize) -> Result<Layer> {
    Ok(Layer::Conv(ConvBlock::new(Conv2d::same(in_c, out_c, kernel), true)?))
}

fn max_pool(kernel: usize, stride: usize, padding: usize) -> Layer {
    Layer::MaxPool(Pool {
        mode: PoolMode::Max,
        kernel,
        stride,
        padding,
    })
}

fn avg_pool(kernel: usize) -> Layer {
    Layer::AvgPool(Pool {
        mode: PoolMode::Avg,
        kernel,
        stride: 1,
        padding: 0,
    })
}

/// Builds the layer list of `kind` for `in_channels` input planes. All
/// parameters start at zero; use [`NetworkModel::init_seeded`] or load weights.
pub fn build_network(kind: NetworkKind, in_channels: usize) -> Result<NetworkModel> {
    if in_channels == 0 {
        return Err(Error::Config("a network needs at least one input channel".into()));
    }
    let mut layers: Vec<(Option<String>, Layer)> = Vec::new();
    match kind {
        NetworkKind::VNet => {
            let mut c = in_channels;
            for &(width, convs) in &VNET_STAGES {
                for _ in 0..convs {
                    layers.push((None, conv_block(c, width, 3)?));
                    c = width;
                }
                layers.push((None, max_pool(2, 2, 0)));
            }
            let side = PLANE_SIZE >> VNET_STAGES.len();
            layers.push((None, Layer::Linear(Linear::new(c * side * side, 512, true))));
            layers.push((None, Layer::Linear(Linear::new(512, 32, true))));
            layers.push((None, Layer::Linear(Linear::new(32, 2, false))));
        }
        NetworkKind::GNet => {
            layers.push((None, conv_block(in_channels, 16, 7)?));
            layers.push((None, max_pool(3, 2, 1)));
            layers.push((None, conv_block(16, 48, 3)?));
            layers.push((None, max_pool(3, 2, 1)));
            let mut c = 48;
            for (i, widths) in GNET_INCEPTION.iter().enumerate() {
                let m = Inception::new(c, *widths)?;
                c = m.out_channels();
                layers.push((Some(format!("Inception Module {}", i + 1)), Layer::Inception(Box::new(m))));
                // down-sampling after modules 2 and 7
                if i == 1 || i == 6 {
                    layers.push((None, max_pool(3, 2, 1)));
                }
            }
            layers.push((None, avg_pool(8)));
            layers.push((None, Layer::Linear(Linear::new(c, 2, false))));
        }
        NetworkKind::RNet => {
            layers.push((None, conv_block(in_channels, 16, 7)?));
            layers.push((None, max_pool(3, 2, 1)));
            let mut c = 16;
            for (i, &(mid, out, blocks, stride)) in RNET_SETS.iter().enumerate() {
                let mut set = Vec::with_capacity(blocks);
                for j in 0..blocks {
                    set.push(Bottleneck::new(c, mid, out, if j == 0 { stride } else { 1 })?);
                    c = out;
                }
                layers.push((Some(format!("Bottleneck Block Set {}", i + 1)), Layer::BottleneckSet(set)));
            }
            layers.push((None, avg_pool(8)));
            layers.push((None, Layer::Linear(Linear::new(c, 2, false))));
        }
    }
    layers.push((None, Layer::Softmax));
    Ok(NetworkModel {
        kind,
        in_channels,
        layers: layers
            .into_iter()
            .map(|(name, layer)| NamedLayer {
                name: name.unwrap_or_else(|| layer.describe()),
                layer,
            })
            .collect(),
    })
}

impl NetworkModel {
    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn layers(&self) -> &[NamedLayer] {
        &self.layers
    }

    /// Number of convolution layers on the main path (not counting inception
    /// or bottleneck internals).
    pub fn conv_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l.layer, Layer::Conv(_))).count()
    }

    pub fn linear_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l.layer, Layer::Linear(_))).count()
    }

    pub fn inception_modules(&self) -> Vec<&Inception> {
        self.layers
            .iter()
            .filter_map(|l| match &l.layer {
                Layer::Inception(m) => Some(m.as_ref()),
                _ => None,
            })
            .collect()
    }

    pub fn bottleneck_set_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match &l.layer {
                Layer::BottleneckSet(b) => Some(b.len()),
                _ => None,
            })
            .collect()
    }

    pub(crate) fn params_with_rules(&mut self) -> Vec<(ParamMut<'_>, InitRule)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.layer.params_mut(&format!("layers.{i}"), &mut out);
        }
        out
    }

    /// Every parameter in canonical (manifest) order.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        self.params_with_rules().into_iter().map(|(p, _)| p).collect()
    }

    /// Read-only parameter views in manifest order.
    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.layer.params(&format!("layers.{i}"), &mut out);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    /// Uniform `±sqrt(1/fan_in)` weights and biases, unit GN scale, zero GN shift.
    pub fn init_seeded(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (p, rule) in self.params_with_rules() {
            init_param(p.data, rule, &mut rng);
        }
    }

    pub fn seeded(kind: NetworkKind, in_channels: usize, seed: u64) -> Result<Self> {
        let mut m = build_network(kind, in_channels)?;
        m.init_seeded(seed);
        Ok(m)
    }

    /// Runs a `(batch, C_in, 128, 128)` input through every layer.
    pub fn forward(&self, input: &Tensor4) -> Result<ForwardOutput> {
        let [_, c, h, w] = input.shape();
        if c != self.in_channels || h != PLANE_SIZE || w != PLANE_SIZE {
            return Err(Error::Shape(format!(
                "{} expects (N, {}, {PLANE_SIZE}, {PLANE_SIZE}) input, got {:?}",
                self.kind,
                self.in_channels,
                input.shape()
            )));
        }
        let mut trace = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        let mut logits = None;
        for (index, l) in self.layers.iter().enumerate() {
            if matches!(l.layer, Layer::Softmax) {
                logits = Some(x.clone());
            }
            x = l.layer.forward(&x).map_err(|e| Error::Layer {
                index,
                name: l.name.clone(),
                message: e.to_string(),
            })?;
            if cfg!(debug_assertions) && !x.all_finite() {
                return Err(Error::Layer {
                    index,
                    name: l.name.clone(),
                    message: "non-finite activation".into(),
                });
            }
            trace.push(TraceEntry {
                name: l.name.clone(),
                shape: x.sample_shape(),
            });
        }
        let logits = logits.ok_or_else(|| Error::Config("network has no softmax layer".into()))?;
        if logits.sample_len() != 2 {
            return Err(Error::Shape(format!("classifier head produced {:?}", logits.sample_shape())));
        }
        let probabilities = (0..logits.batch())
            .map(|n| {
                let s = logits.sample(n);
                let p = ops::softmax(&[s[0] as f64, s[1] as f64]);
                [p[0], p[1]]
            })
            .collect();
        Ok(ForwardOutput { probabilities, trace })
    }
}
