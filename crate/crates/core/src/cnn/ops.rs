//! Layer primitives. Convolutions run as f32 GEMMs; the other reductions
//! (normalization statistics, dense layers, softmax) accumulate in f64.

use rayon::prelude::*;

use super::Tensor4;
use crate::error::{Error, Result};

/// `floor((size + 2 * padding - kernel) / stride) + 1`.
pub fn output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return Err(Error::Shape(format!(
            "kernel {kernel} / stride {stride} / padding {padding} does not fit input size {size}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

const COLUMN_CHUNK: usize = 512;

/// 2-D cross-correlation. `kernels` is shaped `(out, in, kh, kw)`.
pub fn conv2d(input: &Tensor4, kernels: &Tensor4, bias: &[f32], stride: usize, padding: usize) -> Result<Tensor4> {
    conv2d_slice(input, kernels.data(), kernels.shape(), bias, stride, padding)
}

/// [`conv2d`] with the kernel given as a flat slice plus its shape.
pub fn conv2d_slice(
    input: &Tensor4,
    kernels: &[f32],
    kernel_shape: [usize; 4],
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> Result<Tensor4> {
    let [n, c_in, h, w] = input.shape();
    let [c_out, k_in, kh, kw] = kernel_shape;
    if kernels.len() != kernel_shape.iter().product::<usize>() {
        return Err(Error::Shape(format!("kernel data does not match shape {kernel_shape:?}")));
    }
    if k_in != c_in {
        return Err(Error::Shape(format!("conv expects {k_in} input channels, got {c_in}")));
    }
    if bias.len() != c_out {
        return Err(Error::Shape(format!("conv bias has {} entries for {c_out} outputs", bias.len())));
    }
    let h_out = output_size(h, kh, stride, padding)?;
    let w_out = output_size(w, kw, stride, padding)?;
    let k = c_in * kh * kw;
    let cols = h_out * w_out;
    let pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;

    let mut out = Vec::with_capacity(n * c_out * cols);
    for s in 0..n {
        let x = input.sample(s);
        let owned;
        let patches: &[f32] = if pointwise {
            x
        } else {
            owned = im2col(x, c_in, h, w, kh, kw, stride, padding, h_out, w_out);
            &owned
        };
        // each column chunk is an independent GEMM, so the split never changes the result
        let chunks: Vec<(usize, Vec<f32>)> = (0..cols)
            .step_by(COLUMN_CHUNK)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|start| {
                let width = COLUMN_CHUNK.min(cols - start);
                let mut c = vec![0.0f32; c_out * width];
                // SAFETY: A is c_out x k (row-major), B is the k x width block of the
                // k x cols patch matrix starting at column `start`, C is c_out x width.
                unsafe {
                    matrixmultiply::sgemm(
                        c_out,
                        k,
                        width,
                        1.0,
                        kernels.as_ptr(),
                        k as isize,
                        1,
                        patches.as_ptr().add(start),
                        cols as isize,
                        1,
                        0.0,
                        c.as_mut_ptr(),
                        width as isize,
                        1,
                    );
                }
                (start, c)
            })
            .collect();
        let mut sample = vec![0.0f32; c_out * cols];
        for (start, c) in chunks {
            let width = c.len() / c_out.max(1);
            for o in 0..c_out {
                let b = bias[o];
                let dst = &mut sample[o * cols + start..o * cols + start + width];
                for (d, &v) in dst.iter_mut().zip(&c[o * width..(o + 1) * width]) {
                    *d = v + b;
                }
            }
        }
        out.extend_from_slice(&sample);
    }
    Tensor4::new([n, c_out, h_out, w_out], out)
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
) -> Vec<f32> {
    let cols = h_out * w_out;
    let mut m = vec![0.0f32; c_in * kh * kw * cols];
    m.par_chunks_mut(kh * kw * cols).enumerate().for_each(|(c, block)| {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut block[(ky * kw + kx) * cols..(ky * kw + kx + 1) * cols];
                for oy in 0..h_out {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..w_out {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            row[oy * w_out + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    });
    m
}

/// Group normalization: per sample and group of `channels / groups` channels,
/// `gamma * (x - mean) / sqrt(var + eps) + beta`.
pub fn group_norm(input: &Tensor4, groups: usize, gamma: &[f32], beta: &[f32], eps: f64) -> Result<Tensor4> {
    let [_, c, h, w] = input.shape();
    if groups == 0 || c % groups != 0 {
        return Err(Error::Config(format!("{c} channels cannot be split into {groups} groups")));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape(format!("group norm affine parameters must have {c} entries")));
    }
    let per_group = c / groups * h * w;
    let plane = h * w;
    let mut out = input.data().to_vec();
    out.par_chunks_mut(per_group).enumerate().for_each(|(idx, chunk)| {
        let g = idx % groups;
        let count = chunk.len() as f64;
        let mean = chunk.iter().map(|&v| v as f64).sum::<f64>() / count;
        let var = chunk.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / count;
        let inv = 1.0 / (var + eps).sqrt();
        for (i, v) in chunk.iter_mut().enumerate() {
            let ch = g * (c / groups) + i / plane;
            *v = (gamma[ch] as f64 * (*v as f64 - mean) * inv + beta[ch] as f64) as f32;
        }
    });
    Tensor4::new(input.shape(), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    /// Padding never wins the maximum.
    Max,
    /// Divides by the full kernel area, padded cells included.
    Avg,
}

pub fn pool2d(input: &Tensor4, mode: PoolMode, kernel: usize, stride: usize, padding: usize) -> Result<Tensor4> {
    let [n, c, h, w] = input.shape();
    let h_out = output_size(h, kernel, stride, padding)?;
    let w_out = output_size(w, kernel, stride, padding)?;
    let area = (kernel * kernel) as f64;
    let mut out = vec![0.0f32; n * c * h_out * w_out];
    out.par_chunks_mut(h_out * w_out).enumerate().for_each(|(plane_idx, dst)| {
        let src = &input.data()[plane_idx * h * w..(plane_idx + 1) * h * w];
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut max = f32::NEG_INFINITY;
                let mut sum = 0.0f64;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let v = src[iy as usize * w + ix as usize];
                        max = max.max(v);
                        sum += v as f64;
                    }
                }
                dst[oy * w_out + ox] = match mode {
                    PoolMode::Max => max,
                    PoolMode::Avg => (sum / area) as f32,
                };
            }
        }
    });
    Tensor4::new([n, c, h_out, w_out], out)
}

/// `W x + b` with `weights` row-major `(out, in)`.
pub fn linear(input: &[f32], weights: &[f32], bias: &[f32]) -> Result<Vec<f32>> {
    let out = bias.len();
    if weights.len() != out * input.len() {
        return Err(Error::Shape(format!(
            "linear layer with {} weights cannot map {} inputs to {out} outputs",
            weights.len(),
            input.len()
        )));
    }
    Ok(weights
        .par_chunks(input.len().max(1))
        .zip(bias.par_iter())
        .map(|(row, &b)| {
            let dot: f64 = row.iter().zip(input).map(|(&a, &x)| a as f64 * x as f64).sum();
            (dot + b as f64) as f32
        })
        .collect())
}

pub fn relu_in_place(t: &mut Tensor4) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean over the batch of `-ln p[label]`, with `p` clamped to at least 1e-12.
pub fn cross_entropy(probabilities: &[[f64; 2]], labels: &[usize]) -> Result<f64> {
    if probabilities.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probability rows for {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    if probabilities.is_empty() {
        return Err(Error::Empty("cross entropy of an empty batch".into()));
    }
    let mut total = 0.0;
    for (p, &label) in probabilities.iter().zip(labels) {
        let q = *p
            .get(label)
            .ok_or_else(|| Error::Shape(format!("label {label} is not a class index")))?;
        total -= q.max(1e-12).ln();
    }
    Ok(total / labels.len() as f64)
}
