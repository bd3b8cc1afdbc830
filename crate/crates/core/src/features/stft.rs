use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowFunction {
    /// Periodic Hann taper.
    Hann,
    Rectangular,
}

impl WindowFunction {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowFunction::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
                .collect(),
            WindowFunction::Rectangular => vec![1.0; len],
        }
    }
}

/// FFT size, analysis window and hop, all in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftParams {
    pub n_fft: usize,
    pub window_length: usize,
    pub hop_length: usize,
    pub window_function: WindowFunction,
}

impl Default for StftParams {
    /// 512-point FFT, 30 ms window, 15 ms hop at 16 kHz.
    fn default() -> Self {
        Self {
            n_fft: 512,
            window_length: 480,
            hop_length: 240,
            window_function: WindowFunction::Hann,
        }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_length == 0 || self.window_length > self.n_fft {
            return Err(Error::Config(format!(
                "window_length {} must lie in 1..={}",
                self.window_length, self.n_fft
            )));
        }
        if self.hop_length == 0 {
            return Err(Error::Config("hop_length must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// `floor((len - window) / hop) + 1`, or 0 when the signal is shorter than one window.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window_length {
            0
        } else {
            (len - self.window_length) / self.hop_length + 1
        }
    }
}

/// Reusable STFT engine.
#[derive(Clone)]
pub struct Stft {
    params: StftParams,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("params", &self.params).finish()
    }
}

impl Stft {
    pub fn new(params: StftParams) -> Result<Self> {
        params.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(params.n_fft);
        Ok(Self {
            window: params.window_function.coefficients(params.window_length),
            params,
            fft,
        })
    }

    pub fn params(&self) -> &StftParams {
        &self.params
    }

    /// Power spectrum `|X|^2`, shaped `(n_bins, frames)`. Each frame is the
    /// tapered window zero-padded to `n_fft`; frames start at multiples of the
    /// hop and never run past the signal end.
    pub fn power(&self, signal: &[f32]) -> Result<Array2<f64>> {
        let p = &self.params;
        let frames = p.frame_count(signal.len());
        if frames == 0 {
            return Err(Error::Size(format!(
                "signal of {} samples is shorter than one {}-sample frame",
                signal.len(),
                p.window_length
            )));
        }
        let bins = p.n_bins();
        let mut out = Array2::zeros((bins, frames));
        let mut buf = vec![Complex::new(0.0, 0.0); p.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let start = t * p.hop_length;
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (i, (&x, &w)) in signal[start..start + p.window_length]
                .iter()
                .zip(&self.window)
                .enumerate()
            {
                buf[i] = Complex::new(x as f64 * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (f, c) in buf.iter().take(bins).enumerate() {
                out[[f, t]] = c.norm_sqr();
            }
        }
        Ok(out)
    }
}
