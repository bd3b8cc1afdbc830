//! Spectrogram-family features (SP, MS, MFCC), their velocity and
//! acceleration maps, multi-channel assembly and per-channel normalization.

mod format;
pub mod mel;
pub mod stft;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioClip;
use crate::error::{Error, Result};
use crate::MODEL_SAMPLE_RATE;

pub use format::{read_feature_file, write_feature_csv, write_feature_file, FEATURE_MAGIC, FEATURE_VERSION};
pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz};
pub use stft::{Stft, StftParams, WindowFunction};

/// Height and width of every assembled plane.
pub const PLANE_SIZE: usize = 128;
/// Mel bands and retained cepstral coefficients.
pub const N_MELS: usize = 128;
/// Floor applied to power before taking decibels.
pub const POWER_FLOOR: f64 = 1e-10;

/// `10 log10(max(power, 1e-10))`; silence maps to -100 dB.
pub fn power_to_db(power: f64) -> f64 {
    10.0 * power.max(POWER_FLOOR).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaseFeature {
    Sp,
    Ms,
    Mfcc,
}

impl BaseFeature {
    pub fn token(self) -> &'static str {
        match self {
            BaseFeature::Sp => "SP",
            BaseFeature::Ms => "MS",
            BaseFeature::Mfcc => "MFCC",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlaneKind {
    Base(BaseFeature),
    Velocity(BaseFeature),
    Acceleration(BaseFeature),
}

impl PlaneKind {
    pub fn base(self) -> BaseFeature {
        match self {
            PlaneKind::Base(b) | PlaneKind::Velocity(b) | PlaneKind::Acceleration(b) => b,
        }
    }
}

impl fmt::Display for PlaneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlaneKind::Base(b) => f.write_str(b.token()),
            PlaneKind::Velocity(b) => write!(f, "V({})", b.token()),
            PlaneKind::Acceleration(b) => write!(f, "A({})", b.token()),
        }
    }
}

/// One time-frequency matrix. Rows are frequency bins / mel bands /
/// coefficients, columns are frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePlane {
    pub kind: PlaneKind,
    pub data: Array2<f64>,
}

impl FeaturePlane {
    pub fn new(kind: PlaneKind, data: Array2<f64>) -> Self {
        Self { kind, data }
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }
}

/// Eq.-(1) stencil along the time axis (columns): forward difference at the
/// first frame, central difference inside, backward difference at the last.
pub fn time_difference(x: &Array2<f64>) -> Result<Array2<f64>> {
    let (rows, cols) = x.dim();
    if cols < 2 {
        return Err(Error::Size(format!("time differencing needs at least 2 frames, got {cols}")));
    }
    let last = cols - 1;
    let mut out = Array2::zeros((rows, cols));
    for f in 0..rows {
        out[[f, 0]] = x[[f, 1]] - x[[f, 0]];
        for t in 1..last {
            out[[f, t]] = (x[[f, t + 1]] - x[[f, t - 1]]) / 2.0;
        }
        out[[f, last]] = x[[f, last]] - x[[f, last - 1]];
    }
    Ok(out)
}

/// V-map of a base plane.
pub fn velocity_map(base: &FeaturePlane) -> Result<FeaturePlane> {
    Ok(FeaturePlane::new(
        PlaneKind::Velocity(base.kind.base()),
        time_difference(&base.data)?,
    ))
}

/// A-map: the velocity stencil applied to the V-map of `base`.
pub fn acceleration_map(base: &FeaturePlane) -> Result<FeaturePlane> {
    let v = time_difference(&base.data)?;
    Ok(FeaturePlane::new(
        PlaneKind::Acceleration(base.kind.base()),
        time_difference(&v)?,
    ))
}

/// Orthonormal DCT-II basis, `basis[[k, n]] = s_k cos(pi (n + 1/2) k / N)`.
pub fn dct_ii_matrix(n: usize) -> Array2<f64> {
    let mut m = Array2::zeros((n, n));
    let nf = n as f64;
    for k in 0..n {
        let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for i in 0..n {
            m[[k, i]] = scale * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / nf).cos();
        }
    }
    m
}

/// Precomputed STFT, mel filterbank and DCT for repeated extraction.
#[derive(Clone)]
pub struct FeatureExtractor {
    stft: Stft,
    mel_bank: Array2<f64>,
    dct: Array2<f64>,
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor").field("params", self.params()).finish()
    }
}

impl FeatureExtractor {
    pub fn new(params: StftParams) -> Result<Self> {
        let stft = Stft::new(params)?;
        let nyquist = MODEL_SAMPLE_RATE as f64 / 2.0;
        Ok(Self {
            mel_bank: mel_filterbank(MODEL_SAMPLE_RATE, params.n_fft, N_MELS, 0.0, nyquist),
            dct: dct_ii_matrix(N_MELS),
            stft,
        })
    }

    pub fn params(&self) -> &StftParams {
        self.stft.params()
    }

    fn check_rate(clip: &AudioClip) -> Result<()> {
        if clip.sample_rate() != MODEL_SAMPLE_RATE {
            return Err(Error::Config(format!(
                "features expect {MODEL_SAMPLE_RATE} Hz audio, got {} Hz",
                clip.sample_rate()
            )));
        }
        Ok(())
    }

    /// Uncropped power spectrogram in dB, `(n_fft/2 + 1, frames)`.
    pub fn spectrogram_db_full(&self, clip: &AudioClip) -> Result<Array2<f64>> {
        Self::check_rate(clip)?;
        Ok(self.stft.power(clip.samples())?.mapv(power_to_db))
    }

    /// Uncropped mel spectrogram in dB, `(128, frames)`.
    pub fn mel_db_full(&self, clip: &AudioClip) -> Result<Array2<f64>> {
        Self::check_rate(clip)?;
        let power = self.stft.power(clip.samples())?;
        Ok(self.mel_bank.dot(&power).mapv(power_to_db))
    }

    pub fn spectrogram(&self, clip: &AudioClip) -> Result<FeaturePlane> {
        let full = self.spectrogram_db_full(clip)?;
        Ok(FeaturePlane::new(PlaneKind::Base(BaseFeature::Sp), crop(&full)))
    }

    pub fn mel_spectrogram(&self, clip: &AudioClip) -> Result<FeaturePlane> {
        let full = self.mel_db_full(clip)?;
        Ok(FeaturePlane::new(PlaneKind::Base(BaseFeature::Ms), crop(&full)))
    }

    /// All 128 orthonormal DCT-II coefficients of the log-mel (dB) frames.
    pub fn mfcc(&self, clip: &AudioClip) -> Result<FeaturePlane> {
        let mel = self.mel_spectrogram(clip)?;
        Ok(FeaturePlane::new(PlaneKind::Base(BaseFeature::Mfcc), self.dct.dot(&mel.data)))
    }

    pub fn base(&self, clip: &AudioClip, kind: BaseFeature) -> Result<FeaturePlane> {
        match kind {
            BaseFeature::Sp => self.spectrogram(clip),
            BaseFeature::Ms => self.mel_spectrogram(clip),
            BaseFeature::Mfcc => self.mfcc(clip),
        }
    }

    /// Stacks the planes named by `spec`, computing each base feature once.
    pub fn assemble(&self, clip: &AudioClip, spec: &FeatureSpec) -> Result<FeatureTensor> {
        let mut cache: Vec<(BaseFeature, FeaturePlane)> = Vec::new();
        let mut planes = Vec::with_capacity(spec.channels());
        for &kind in spec.planes() {
            let base = kind.base();
            let base_plane = match cache.iter().find(|(b, _)| *b == base) {
                Some((_, p)) => p.clone(),
                None => {
                    let p = self.base(clip, base)?;
                    cache.push((base, p.clone()));
                    p
                }
            };
            if base_plane.height() != PLANE_SIZE || base_plane.width() != PLANE_SIZE {
                return Err(Error::Size(format!(
                    "{} plane is {}x{}, need {PLANE_SIZE}x{PLANE_SIZE}; the clip must cover {} frames",
                    base.token(),
                    base_plane.height(),
                    base_plane.width(),
                    PLANE_SIZE
                )));
            }
            planes.push(match kind {
                PlaneKind::Base(_) => base_plane,
                PlaneKind::Velocity(_) => velocity_map(&base_plane)?,
                PlaneKind::Acceleration(_) => acceleration_map(&base_plane)?,
            });
        }
        FeatureTensor::new(spec.clone(), planes)
    }
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new(StftParams::default()).expect("default STFT parameters are valid")
    }
}

fn crop(full: &Array2<f64>) -> Array2<f64> {
    let rows = full.nrows().min(PLANE_SIZE);
    let cols = full.ncols().min(PLANE_SIZE);
    full.slice(ndarray::s![..rows, ..cols]).to_owned()
}

/// Power spectrogram in dB, cropped to the lowest 128 bins and first 128 frames.
pub fn spectrogram(clip: &AudioClip, params: StftParams) -> Result<FeaturePlane> {
    FeatureExtractor::new(params)?.spectrogram(clip)
}

/// 128-band HTK mel spectrogram in dB over 0 Hz..Nyquist, first 128 frames.
pub fn mel_spectrogram(clip: &AudioClip, params: StftParams) -> Result<FeaturePlane> {
    FeatureExtractor::new(params)?.mel_spectrogram(clip)
}

pub fn mfcc(clip: &AudioClip, params: StftParams) -> Result<FeaturePlane> {
    FeatureExtractor::new(params)?.mfcc(clip)
}

pub fn assemble(clip: &AudioClip, spec: &str) -> Result<FeatureTensor> {
    FeatureExtractor::default().assemble(clip, &spec.parse()?)
}

/// Channel layout such as `MFCC-V-A` or `SP-MS`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureSpec {
    planes: Vec<PlaneKind>,
}

impl FeatureSpec {
    /// Every layout accepted by [`FeatureSpec::from_str`].
    pub const ALL: [&'static str; 13] = [
        "SP", "MS", "MFCC", "SP-V", "MS-V", "MFCC-V", "SP-V-A", "MS-V-A", "MFCC-V-A", "SP-MS", "SP-MFCC", "MS-MFCC",
        "SP-MS-MFCC",
    ];

    pub fn planes(&self) -> &[PlaneKind] {
        &self.planes
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }
}

impl FromStr for FeatureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::FeatureSpec(s.to_string());
        let tokens: Vec<&str> = s.trim().split('-').collect();
        let base = |t: &str| match t {
            "SP" => Some(BaseFeature::Sp),
            "MS" => Some(BaseFeature::Ms),
            "MFCC" => Some(BaseFeature::Mfcc),
            _ => None,
        };
        let planes = match tokens.as_slice() {
            [b] => vec![PlaneKind::Base(base(b).ok_or_else(bad)?)],
            [b, "V"] => {
                let b = base(b).ok_or_else(bad)?;
                vec![PlaneKind::Base(b), PlaneKind::Velocity(b)]
            }
            [b, "V", "A"] => {
                let b = base(b).ok_or_else(bad)?;
                vec![PlaneKind::Base(b), PlaneKind::Velocity(b), PlaneKind::Acceleration(b)]
            }
            combo @ ([_, _] | [_, _, _]) => {
                let bases = combo.iter().map(|t| base(t)).collect::<Option<Vec<_>>>().ok_or_else(bad)?;
                // combinations are listed in SP, MS, MFCC order without repeats
                if !bases.windows(2).all(|w| (w[0] as u8) < (w[1] as u8)) {
                    return Err(bad());
                }
                bases.into_iter().map(PlaneKind::Base).collect()
            }
            _ => return Err(bad()),
        };
        Ok(Self { planes })
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tokens: Vec<&str> = self
            .planes
            .iter()
            .map(|p| match p {
                PlaneKind::Base(b) => b.token(),
                PlaneKind::Velocity(_) => "V",
                PlaneKind::Acceleration(_) => "A",
            })
            .collect();
        f.write_str(&tokens.join("-"))
    }
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Channels whose standard deviation is not strictly positive.
    pub fn degenerate_channels(&self) -> Vec<usize> {
        self.std
            .iter()
            .enumerate()
            .filter(|(_, &s)| !(s > 0.0))
            .map(|(c, _)| c)
            .collect()
    }

    pub fn is_degenerate(&self) -> bool {
        !self.degenerate_channels().is_empty()
    }
}

/// C x 128 x 128 stack of feature planes in spec order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    spec: FeatureSpec,
    planes: Vec<FeaturePlane>,
    channel_stats: Option<ChannelStats>,
}

impl FeatureTensor {
    pub fn new(spec: FeatureSpec, planes: Vec<FeaturePlane>) -> Result<Self> {
        if planes.len() != spec.channels() {
            return Err(Error::Shape(format!(
                "spec {spec} has {} channels but {} planes were given",
                spec.channels(),
                planes.len()
            )));
        }
        for (i, (plane, kind)) in planes.iter().zip(spec.planes()).enumerate() {
            if plane.kind != *kind {
                return Err(Error::Shape(format!("channel {i} is {} but spec {spec} expects {kind}", plane.kind)));
            }
            if plane.data.dim() != (PLANE_SIZE, PLANE_SIZE) {
                return Err(Error::Shape(format!("channel {i} has shape {:?}", plane.data.dim())));
            }
            if plane.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("channel {i} contains non-finite values")));
            }
        }
        Ok(Self {
            spec,
            planes,
            channel_stats: None,
        })
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn planes(&self) -> &[FeaturePlane] {
        &self.planes
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    /// `(C, H, W)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.planes.len(), PLANE_SIZE, PLANE_SIZE)
    }

    /// Statistics this tensor was normalized with, if any.
    pub fn channel_stats(&self) -> Option<&ChannelStats> {
        self.channel_stats.as_ref()
    }

    /// Values in channel-major, row-major order.
    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.planes.iter().flat_map(|p| p.data.iter().map(|&v| v as f32)).collect()
    }
}

/// Single-pass (count, mean, M2) accumulator per channel. Partial
/// accumulators merge exactly, so chunks may be reduced in any grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsAccumulator {
    count: Vec<u64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(channels: usize) -> Self {
        Self {
            count: vec![0; channels],
            mean: vec![0.0; channels],
            m2: vec![0.0; channels],
        }
    }

    pub fn push(&mut self, tensor: &FeatureTensor) -> Result<()> {
        if tensor.channels() != self.count.len() {
            return Err(Error::Shape(format!(
                "tensor has {} channels, accumulator {}",
                tensor.channels(),
                self.count.len()
            )));
        }
        for (c, plane) in tensor.planes().iter().enumerate() {
            // combine this plane's own (n, mean, M2) with the running totals
            let n = plane.data.len() as u64;
            let mean = plane.data.mean().unwrap_or(0.0);
            let m2: f64 = plane.data.iter().map(|&x| (x - mean) * (x - mean)).sum();
            self.merge_channel(c, n, mean, m2);
        }
        Ok(())
    }

    fn merge_channel(&mut self, c: usize, n_b: u64, mean_b: f64, m2_b: f64) {
        let n_a = self.count[c];
        let n = n_a + n_b;
        if n == 0 {
            return;
        }
        let delta = mean_b - self.mean[c];
        self.mean[c] += delta * n_b as f64 / n as f64;
        self.m2[c] += m2_b + delta * delta * (n_a as f64 * n_b as f64) / n as f64;
        self.count[c] = n;
    }

    pub fn merge(mut self, other: &StatsAccumulator) -> Result<Self> {
        if other.count.len() != self.count.len() {
            return Err(Error::Shape("accumulators disagree on channel count".into()));
        }
        for c in 0..self.count.len() {
            self.merge_channel(c, other.count[c], other.mean[c], other.m2[c]);
        }
        Ok(self)
    }

    pub fn finish(&self) -> Result<ChannelStats> {
        if self.count.contains(&0) {
            return Err(Error::Empty("no feature tensors were accumulated".into()));
        }
        Ok(ChannelStats {
            mean: self.mean.clone(),
            std: self
                .m2
                .iter()
                .zip(&self.count)
                .map(|(&m2, &n)| (m2 / n as f64).max(0.0).sqrt())
                .collect(),
        })
    }
}

/// Per-channel mean and population std over every entry of every tensor.
pub fn compute_channel_stats<'a, I>(batch: I) -> Result<ChannelStats>
where
    I: IntoIterator<Item = &'a FeatureTensor>,
{
    let mut iter = batch.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::Empty("cannot compute statistics of an empty batch".into()))?;
    let mut acc = StatsAccumulator::new(first.channels());
    acc.push(first)?;
    for t in iter {
        acc.push(t)?;
    }
    acc.finish()
}

/// `x -> (x - mean_c) / std_c` per channel.
pub fn normalize(batch: &[FeatureTensor], stats: &ChannelStats) -> Result<Vec<FeatureTensor>> {
    if let Some(c) = stats.degenerate_channels().first() {
        return Err(Error::DegenerateStats(format!(
            "channel {c} has std {}",
            stats.std[*c]
        )));
    }
    batch
        .iter()
        .map(|t| {
            if t.channels() != stats.channels() {
                return Err(Error::Shape(format!(
                    "tensor has {} channels, statistics {}",
                    t.channels(),
                    stats.channels()
                )));
            }
            let planes = t
                .planes
                .iter()
                .enumerate()
                .map(|(c, p)| {
                    let (m, s) = (stats.mean[c], stats.std[c]);
                    FeaturePlane::new(p.kind, p.data.mapv(|x| (x - m) / s))
                })
                .collect();
            Ok(FeatureTensor {
                spec: t.spec.clone(),
                planes,
                channel_stats: Some(stats.clone()),
            })
        })
        .collect()
}

/// Mean over the time axis, one value per row.
pub fn row_means(plane: &FeaturePlane) -> Vec<f64> {
    plane.data.mean_axis(Axis(1)).map(|a| a.to_vec()).unwrap_or_default()
}
