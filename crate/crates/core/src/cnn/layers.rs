//! Parameterised building blocks: conv blocks, pools, fully-connected
//! layers, inception modules and bottleneck blocks.

use rand::Rng;

use super::ops::{self, PoolMode};
use super::Tensor4;
use crate::error::{Error, Result};

/// Group count for every group normalization.
pub const GN_GROUPS: usize = 8;
pub const GN_EPS: f64 = 1e-5;

/// Mutable view of one named parameter.
pub struct ParamMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut Vec<f32>,
}

/// Read-only view of one named parameter.
pub struct ParamRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f32],
}

/// How a parameter is filled by seeded initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum InitRule {
    /// Uniform in `±sqrt(1 / fan_in)`.
    FanIn(usize),
    Ones,
    Zeros,
}

pub(crate) fn init_param<R: Rng>(data: &mut [f32], rule: InitRule, rng: &mut R) {
    match rule {
        InitRule::FanIn(fan_in) => {
            let bound = (1.0 / fan_in.max(1) as f64).sqrt() as f32;
            data.iter_mut().for_each(|v| *v = rng.random_range(-bound..=bound));
        }
        InitRule::Ones => data.iter_mut().for_each(|v| *v = 1.0),
        InitRule::Zeros => data.iter_mut().for_each(|v| *v = 0.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `(out, in, k, k)` flattened.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    /// Stride-1 convolution with `floor(k/2)` padding.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self::new(in_channels, out_channels, kernel, 1, kernel / 2)
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        ops::conv2d_slice(
            x,
            &self.weight,
            [self.out_channels, self.in_channels, self.kernel, self.kernel],
            &self.bias,
            self.stride,
            self.padding,
        )
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: format!("{prefix}.weight"),
            shape: vec![self.out_channels, self.in_channels, self.kernel, self.kernel],
            data: &self.weight,
        });
        out.push(ParamRef {
            name: format!("{prefix}.bias"),
            shape: vec![self.out_channels],
            data: &self.bias,
        });
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(ParamMut<'a>, InitRule)>) {
        let fan_in = self.in_channels * self.kernel * self.kernel;
        let shape = vec![self.out_channels, self.in_channels, self.kernel, self.kernel];
        out.push((
            ParamMut {
                name: format!("{prefix}.weight"),
                shape,
                data: &mut self.weight,
            },
            InitRule::FanIn(fan_in),
        ));
        out.push((
            ParamMut {
                name: format!("{prefix}.bias"),
                shape: vec![self.out_channels],
                data: &mut self.bias,
            },
            InitRule::FanIn(fan_in),
        ));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm {
    pub groups: usize,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

impl GroupNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            groups: GN_GROUPS,
            gamma: vec![0.0; channels],
            beta: vec![0.0; channels],
        }
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        ops::group_norm(x, self.groups, &self.gamma, &self.beta, GN_EPS)
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        let c = self.gamma.len();
        out.push(ParamRef {
            name: format!("{prefix}.gamma"),
            shape: vec![c],
            data: &self.gamma,
        });
        out.push(ParamRef {
            name: format!("{prefix}.beta"),
            shape: vec![c],
            data: &self.beta,
        });
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(ParamMut<'a>, InitRule)>) {
        let c = self.gamma.len();
        out.push((
            ParamMut {
                name: format!("{prefix}.gamma"),
                shape: vec![c],
                data: &mut self.gamma,
            },
            InitRule::Ones,
        ));
        out.push((
            ParamMut {
                name: format!("{prefix}.beta"),
                shape: vec![c],
                data: &mut self.beta,
            },
            InitRule::Zeros,
        ));
    }
}

/// Convolution, group normalization, then optionally ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: GroupNorm,
    pub relu: bool,
}

impl ConvBlock {
    pub fn new(conv: Conv2d, relu: bool) -> Result<Self> {
        if !conv.out_channels.is_multiple_of(GN_GROUPS) {
            return Err(Error::Config(format!(
                "{} output channels are not divisible into {GN_GROUPS} groups",
                conv.out_channels
            )));
        }
        Ok(Self {
            norm: GroupNorm::new(conv.out_channels),
            conv,
            relu,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.conv.out_channels
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        let mut y = self.norm.forward(&self.conv.forward(x)?)?;
        if self.relu {
            ops::relu_in_place(&mut y);
        }
        Ok(y)
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.conv.params(&format!("{prefix}.conv"), out);
        self.norm.params(&format!("{prefix}.gn"), out);
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(ParamMut<'a>, InitRule)>) {
        self.conv.params_mut(&format!("{prefix}.conv"), out);
        self.norm.params_mut(&format!("{prefix}.gn"), out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool {
    pub mode: PoolMode,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Pool {
    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        ops::pool2d(x, self.mode, self.kernel, self.stride, self.padding)
    }
}

/// Fully-connected layer over the flattened sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub relu: bool,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, relu: bool) -> Self {
        Self {
            in_features,
            out_features,
            relu,
            weight: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        }
    }

    /// Output shaped `(batch, out, 1, 1)`.
    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        if x.sample_len() != self.in_features {
            return Err(Error::Shape(format!(
                "fully-connected layer expects {} inputs, got {:?}",
                self.in_features,
                x.sample_shape()
            )));
        }
        let mut data = Vec::with_capacity(x.batch() * self.out_features);
        for n in 0..x.batch() {
            let mut y = ops::linear(x.sample(n), &self.weight, &self.bias)?;
            if self.relu {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            data.extend(y);
        }
        Tensor4::new([x.batch(), self.out_features, 1, 1], data)
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: format!("{prefix}.weight"),
            shape: vec![self.out_features, self.in_features],
            data: &self.weight,
        });
        out.push(ParamRef {
            name: format!("{prefix}.bias"),
            shape: vec![self.out_features],
            data: &self.bias,
        });
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(ParamMut<'a>, InitRule)>) {
        let fan_in = self.in_features;
        out.push((
            ParamMut {
                name: format!("{prefix}.weight"),
                shape: vec![self.out_features, self.in_features],
                data: &mut self.weight,
            },
            InitRule::FanIn(fan_in),
        ));
        out.push((
            ParamMut {
                name: format!("{prefix}.bias"),
                shape: vec![self.out_features],
                data: &mut self.bias,
            },
            InitRule::FanIn(fan_in),
        ));
    }
}

/// Branch widths of one inception module, in table column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InceptionWidths {
    pub c1x1: usize,
    pub c3x3_reduce: usize,
    pub c3x3: usize,
    pub c5x5_reduce: usize,
    pub c5x5: usize,
    pub pool_proj: usize,
}

impl InceptionWidths {
    pub const fn new(c1x1: usize, c3x3_reduce: usize, c3x3: usize, c5x5_reduce: usize, c5x5: usize, pool_proj: usize) -> Self {
        Self {
            c1x1,
            c3x3_reduce,
            c3x3,
            c5x5_reduce,
            c5x5,
            pool_proj,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.c1x1 + self.c3x3 + self.c5x5 + self.pool_proj
    }
}

/// Four parallel branches concatenated along channels: 1x1; 1x1 reduce then
/// 3x3; 1x1 reduce then 5x5; 3x3/1 max pool then 1x1 projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Inception {
    pub widths: InceptionWidths,
    pub branch1: ConvBlock,
    pub branch3_reduce: ConvBlock,
    pub branch3: ConvBlock,
    pub branch5_reduce: ConvBlock,
    pub branch5: ConvBlock,
    pub pool_proj: ConvBlock,
}

impl Inception {
    pub fn new(in_channels: usize, w: InceptionWidths) -> Result<Self> {
        if [w.c1x1, w.c3x3_reduce, w.c3x3, w.c5x5_reduce, w.c5x5, w.pool_proj].contains(&0) {
            return Err(Error::Config(format!("inception widths must be positive: {w:?}")));
        }
        Ok(Self {
            widths: w,
            branch1: ConvBlock::new(Conv2d::same(in_channels, w.c1x1, 1), true)?,
            branch3_reduce: ConvBlock::new(Conv2d::same(in_channels, w.c3x3_reduce, 1), true)?,
            branch3: ConvBlock::new(Conv2d::same(w.c3x3_reduce, w.c3x3, 3), true)?,
            branch5_reduce: ConvBlock::new(Conv2d::same(in_channels, w.c5x5_reduce, 1), true)?,
            branch5: ConvBlock::new(Conv2d::same(w.c5x5_reduce, w.c5x5, 5), true)?,
            pool_proj: ConvBlock::new(Conv2d::same(in_channels, w.pool_proj, 1), true)?,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.branch1.conv.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.widths.out_channels()
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        let b1 = self.branch1.forward(x)?;
        let b3 = self.branch3.forward(&self.branch3_reduce.forward(x)?)?;
        let b5 = self.branch5.forward(&self.branch5_reduce.forward(x)?)?;
        let pooled = ops::pool2d(x, PoolMode::Max, 3, 1, 1)?;
        let b4 = self.pool_proj.forward(&pooled)?;
        Tensor4::concat_channels(&[b1, b3, b5, b4])
    }

    fn branches(&self) -> [(&'static str, &ConvBlock); 6] {
        [
            ("b1x1", &self.branch1),
            ("b3x3_reduce", &self.branch3_reduce),
            ("b3x3", &self.branch3),
            ("b5x5_reduce", &self.branch5_reduce),
            ("b5x5", &self.branch5),
            ("pool_proj", &self.pool_proj),
        ]
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        for (name, b) in self.branches() {
            b.params(&format!("{prefix}.{name}"), out);
        }
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(ParamMut<'a>, InitRule)>) {
        self.branch1.params_mut(&format!("{prefix}.b1x1"), out);
        self.branch3_reduce.params_mut(&format!("{prefix}.b3x3_reduce"), out);
        self.branch3.params_mut(&format!("{prefix}.b3x3"), out);
        self.branch5_reduce.params_mut(&format!("{prefix}.b5x5_reduce"), out);
        self.branch5.params_mut(&format!("{prefix}.b5x5"), out);
        self.pool_proj.params_mut(&format!("{prefix}.pool_proj"), out);
    }
}

/// Residual block: 1x1 reduce, 3x3 (carrying the stride), 1x1 expand, plus a
/// shortcut, with ReLU after the addition. The shortcut is a 1x1 conv + GN
/// projection whenever the channel count or stride changes.
#[derive(Debug, Clone, PartialEq)]
pub struct Bottleneck {
    pub reduce: ConvBlock,
    pub conv: ConvBlock,
    pub expand: ConvBlock,
    pub shortcut: Option<ConvBlock>,
}

impl Bottleneck {
    pub fn new(in_channels: usize, mid: usize, out: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("bottleneck stride must be positive".into()));
        }
        let shortcut = if in_channels != out || stride != 1 {
            Some(ConvBlock::new(Conv2d::new(in_channels, out, 1, stride, 0), false)?)
        } else {
            None
        };
        Ok(Self {
            reduce: ConvBlock::new(Conv2d::same(in_channels, mid, 1), true)?,
            conv: ConvBlock::new(Conv2d::new(mid, mid, 3, stride, 1), true)?,
            expand: ConvBlock::new(Conv2d::same(mid, out, 1), false)?,
            shortcut,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.expand.out_channels()
    }

    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        let residual = self.expand.forward(&self.conv.forward(&self.reduce.forward(x)?)?)?;
        let skip = match &self.shortcut {
            Some(proj) => proj.forward(x)?,
            None => x.clone(),
        };
        if skip.shape() != residual.shape() {
            return Err(Error::Shape(format!(
                "bottleneck shortcut {:?} does not match residual {:?}",
                skip.shape(),
                residual.shape()
            )));
        }
        let mut out = residual;
        for (o, s) in out.data_mut().iter_mut().zip(skip.data()) {
            *o = (*o + s).max(0.0);
        }
        Ok(out)
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.reduce.params(&format!("{prefix}.reduce"), out);
        self.conv.params(&format!("{prefix}.conv3x3"), out);
        self.expand.params(&format!("{prefix}.expand"), out);
        if let Some(s) = &self.shortcut {
            s.params(&format!("{prefix}.shortcut"), out);
        }
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(ParamMut<'a>, InitRule)>) {
        self.reduce.params_mut(&format!("{prefix}.reduce"), out);
        self.conv.params_mut(&format!("{prefix}.conv3x3"), out);
        self.expand.params_mut(&format!("{prefix}.expand"), out);
        if let Some(s) = &mut self.shortcut {
            s.params_mut(&format!("{prefix}.shortcut"), out);
        }
    }
}
