use crate::error::{Error, Result};

/// Dense `(batch, channels, height, width)` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor4 {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "tensor of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> f32) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            for j in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([i, j, y, x]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// `(C, H, W)` of one sample.
    pub fn sample_shape(&self) -> (usize, usize, usize) {
        (self.shape[1], self.shape[2], self.shape[3])
    }

    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn sample(&self, n: usize) -> &[f32] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn get(&self, idx: [usize; 4]) -> f32 {
        let [_, c, h, w] = self.shape;
        self.data[((idx[0] * c + idx[1]) * h + idx[2]) * w + idx[3]]
    }

    /// Stacks single-sample tensors of equal shape into one batch.
    pub fn stack(samples: &[Tensor4]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Empty("cannot stack zero tensors".into()))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for s in samples {
            if s.shape[1..] != first.shape[1..] {
                return Err(Error::Shape(format!("cannot stack {:?} with {:?}", s.shape, first.shape)));
            }
            data.extend_from_slice(&s.data);
            n += s.shape[0];
        }
        Tensor4::new([n, c, h, w], data)
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[Tensor4]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Empty("cannot concatenate zero tensors".into()))?;
        let [n, _, h, w] = first.shape;
        if parts.iter().any(|p| p.shape[0] != n || p.shape[2] != h || p.shape[3] != w) {
            return Err(Error::Shape("channel concatenation needs equal batch and spatial size".into()));
        }
        let c_total: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut data = Vec::with_capacity(n * c_total * h * w);
        for i in 0..n {
            for p in parts {
                data.extend_from_slice(p.sample(i));
            }
        }
        Tensor4::new([n, c_total, h, w], data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl From<&crate::features::FeatureTensor> for Tensor4 {
    fn from(t: &crate::features::FeatureTensor) -> Self {
        let (c, h, w) = t.shape();
        Tensor4 {
            shape: [1, c, h, w],
            data: t.to_f32_vec(),
        }
    }
}
