//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectroflow::cnn::Tensor4;
use spectroflow::features::{BaseFeature, FeaturePlane, FeatureSpec, FeatureTensor, PlaneKind, PLANE_SIZE};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Time-axis difference written index by index: forward at the first frame,
/// central inside, backward at the last.
pub fn stencil(x: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = x.dim();
    let mut out = Array2::zeros((rows, cols));
    for f in 0..rows {
        for t in 0..cols {
            out[[f, t]] = if t == 0 {
                x[[f, 1]] - x[[f, 0]]
            } else if t == cols - 1 {
                x[[f, t]] - x[[f, t - 1]]
            } else {
                (x[[f, t + 1]] - x[[f, t - 1]]) / 2.0
            };
        }
    }
    out
}

/// Six nested loops over (n, o, y, x, c, ky*kx), zero padding.
pub fn naive_conv(input: &Tensor4, kernel: &Tensor4, bias: &[f32], stride: usize, pad: usize) -> (Vec<f64>, [usize; 4]) {
    let [n, c_in, h, w] = input.shape();
    let [c_out, _, kh, kw] = kernel.shape();
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0f64; n * c_out * ho * wo];
    for b in 0..n {
        for o in 0..c_out {
            for y in 0..ho {
                for x in 0..wo {
                    let mut acc = bias[o] as f64;
                    for c in 0..c_in {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (x * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += input.get([b, c, iy as usize, ix as usize]) as f64
                                    * kernel.get([o, c, ky, kx]) as f64;
                            }
                        }
                    }
                    out[((b * c_out + o) * ho + y) * wo + x] = acc;
                }
            }
        }
    }
    (out, [n, c_out, ho, wo])
}

/// White noise through a Blackman-windowed sinc band-pass with edges `lo`
/// and `hi` in cycles per sample, normalized to unit peak.
pub fn band_limited_noise(seed: u64, len: usize, lo: f64, hi: f64) -> Vec<f32> {
    const HALF: i64 = 64;
    let mut r = rng(seed);
    let white: Vec<f64> = (0..len + 2 * HALF as usize).map(|_| r.random_range(-1.0..1.0)).collect();
    let lowpass = |fc: f64, k: i64| {
        if k == 0 {
            2.0 * fc
        } else {
            let x = k as f64;
            (2.0 * std::f64::consts::PI * fc * x).sin() / (std::f64::consts::PI * x)
        }
    };
    let taps: Vec<f64> = (-HALF..=HALF)
        .map(|k| {
            let u = std::f64::consts::PI * k as f64 / HALF as f64;
            let window = 0.42 + 0.5 * u.cos() + 0.08 * (2.0 * u).cos();
            (lowpass(hi, k) - if lo > 0.0 { lowpass(lo, k) } else { 0.0 }) * window
        })
        .collect();
    let y: Vec<f64> = (0..len)
        .map(|i| taps.iter().enumerate().map(|(k, h)| h * white[i + k]).sum())
        .collect();
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    y.iter().map(|v| (v / peak) as f32).collect()
}

/// Random MFCC-V-A shaped tensor with per-channel offset and scale.
pub fn random_tensor(seed: u64) -> FeatureTensor {
    let mut r = rng(seed);
    let spec: FeatureSpec = "MFCC-V-A".parse().unwrap();
    let kinds = [
        PlaneKind::Base(BaseFeature::Mfcc),
        PlaneKind::Velocity(BaseFeature::Mfcc),
        PlaneKind::Acceleration(BaseFeature::Mfcc),
    ];
    let planes = kinds
        .iter()
        .enumerate()
        .map(|(c, &k)| {
            let offset = 10.0 * c as f64 - 5.0;
            let scale = 1.0 + c as f64 * 3.0;
            FeaturePlane::new(
                k,
                Array2::from_shape_fn((PLANE_SIZE, PLANE_SIZE), |_| offset + scale * r.random_range(-1.0..1.0)),
            )
        })
        .collect();
    FeatureTensor::new(spec, planes).unwrap()
}

pub type Shape = (usize, usize, usize);

/// Output size column of the V-net table, one row per traced layer.
pub fn vnet_shapes() -> Vec<Shape> {
    vec![
        (16, 128, 128),
        (16, 128, 128),
        (16, 64, 64),
        (32, 64, 64),
        (32, 64, 64),
        (32, 32, 32),
        (64, 32, 32),
        (64, 32, 32),
        (64, 32, 32),
        (64, 16, 16),
        (128, 16, 16),
        (128, 16, 16),
        (128, 16, 16),
        (128, 8, 8),
        (128, 8, 8),
        (128, 8, 8),
        (128, 8, 8),
        (128, 4, 4),
        (512, 1, 1),
        (32, 1, 1),
        (2, 1, 1),
        (2, 1, 1),
        ]
}

/// Layer name and output size of every G-net table row.
pub fn gnet_table() -> Vec<(String, Shape)> {
    [
        ("Conv+GroupNorm+ReLU 7x7/1", (16, 128, 128)),
        ("MaxPool 3x3/2", (16, 64, 64)),
        ("Conv+GroupNorm+ReLU 3x3/1", (48, 64, 64)),
        ("MaxPool 3x3/2", (48, 32, 32)),
        ("Inception Module 1", (256, 32, 32)),
        ("Inception Module 2", (480, 32, 32)),
        ("MaxPool 3x3/2", (480, 16, 16)),
        ("Inception Module 3", (512, 16, 16)),
        ("Inception Module 4", (512, 16, 16)),
        ("Inception Module 5", (512, 16, 16)),
        ("Inception Module 6", (528, 16, 16)),
        ("Inception Module 7", (832, 16, 16)),
        ("MaxPool 3x3/2", (832, 8, 8)),
        ("Inception Module 8", (832, 8, 8)),
        ("Inception Module 9", (1024, 8, 8)),
        ("AvgPool 8x8/1", (1024, 1, 1)),
        ("FullyConnected", (2, 1, 1)),
        ("Softmax", (2, 1, 1)),
        ]
    .into_iter()
    .map(|(n, s)| (n.to_string(), s))
    .collect()
}

/// Layer name and output size of every R-net table row.
pub fn rnet_table() -> Vec<(String, Shape)> {
    [
        ("Conv+GroupNorm+ReLU 7x7/1", (16, 128, 128)),
        ("MaxPool 3x3/2", (16, 64, 64)),
        ("Bottleneck Block Set 1", (64, 32, 32)),
        ("Bottleneck Block Set 2", (128, 16, 16)),
        ("Bottleneck Block Set 3", (256, 8, 8)),
        ("Bottleneck Block Set 4", (512, 8, 8)),
        ("AvgPool 8x8/1", (512, 1, 1)),
        ("FullyConnected", (2, 1, 1)),
        ("Softmax", (2, 1, 1)),
        ]
    .into_iter()
    .map(|(n, s)| (n.to_string(), s))
    .collect()
}

/// G-net inception rows: output channels, then #1x1, #3x3 reduce, #3x3,
/// #5x5 reduce, #5x5, pool proj.
pub const GNET_INCEPTION_ROWS: [[usize; 7]; 9] = [
    [256, 64, 96, 128, 16, 32, 32],
    [480, 128, 128, 192, 32, 96, 64],
    [512, 192, 96, 208, 16, 48, 64],
    [512, 160, 112, 224, 24, 64, 64],
    [512, 128, 128, 256, 24, 64, 64],
    [528, 112, 144, 288, 32, 64, 64],
    [832, 256, 160, 320, 32, 128, 128],
    [832, 256, 160, 320, 32, 128, 128],
    [1024, 384, 192, 384, 48, 128, 128],
];
