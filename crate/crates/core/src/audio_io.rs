//! WAV reading/writing, resampling to the model rate, and fixed-length
//! segmentation.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono PCM signal with its sample rate. Samples are nominally in [-1, 1]
/// and always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidClip("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidClip(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copy of `len` samples starting at `start`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        let end = start
            .checked_add(len)
            .filter(|&e| e <= self.samples.len())
            .ok_or_else(|| {
                Error::Size(format!(
                    "slice {start}+{len} exceeds clip of {} samples",
                    self.samples.len()
                ))
            })?;
        Ok(Self {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        })
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum()
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// Reads a PCM (8/16/24/32-bit integer) or 32-bit float WAV file. Multichannel
/// files are averaged down to mono; integer samples are divided by the format's
/// maximum magnitude, 2^(bits-1).
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let bytes = fs::read(path.as_ref())?;
    parse_wav(&bytes)
}

/// Same as [`read_wav`] for an in-memory or streamed source.
pub fn read_wav_from<R: Read>(mut source: R) -> Result<AudioClip> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    parse_wav(&bytes)
}

const FORMAT_PCM: u16 = 0x0001;
const FORMAT_FLOAT: u16 = 0x0003;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy)]
struct WavFormat {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Parse("missing RIFF/WAVE header".into()));
    }
    let mut format = None;
    let mut data = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Parse(format!("chunk {:?} overruns the file", String::from_utf8_lossy(id))))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Parse("fmt chunk shorter than 16 bytes".into()));
                }
                let mut tag = le_u16(body, 0);
                if tag == FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(Error::Parse("truncated WAVE_FORMAT_EXTENSIBLE chunk".into()));
                    }
                    // first two bytes of the sub-format GUID carry the real tag
                    tag = le_u16(body, 24);
                }
                format = Some(WavFormat {
                    tag,
                    channels: le_u16(body, 2),
                    sample_rate: le_u32(body, 4),
                    bits: le_u16(body, 14),
                });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    let format = format.ok_or_else(|| Error::Parse("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Parse("no data chunk".into()))?;
    if format.channels == 0 {
        return Err(Error::Parse("zero channels".into()));
    }
    if format.sample_rate == 0 {
        return Err(Error::Parse("zero sample rate".into()));
    }
    let width = match (format.tag, format.bits) {
        (FORMAT_PCM, bits @ (8 | 16 | 24 | 32)) | (FORMAT_FLOAT, bits @ 32) => bits as usize / 8,
        (FORMAT_PCM, bits) => return Err(Error::UnsupportedFormat(format!("{bits}-bit integer PCM"))),
        (FORMAT_FLOAT, bits) => return Err(Error::UnsupportedFormat(format!("{bits}-bit float"))),
        (tag, _) => return Err(Error::UnsupportedFormat(format!("format tag {tag:#06x}"))),
    };
    let decode = |s: &[u8]| -> f64 {
        match (format.tag, width) {
            (FORMAT_FLOAT, _) => f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64,
            (_, 1) => (s[0] as f64 - 128.0) / 128.0,
            (_, 2) => i16::from_le_bytes([s[0], s[1]]) as f64 / 32_768.0,
            (_, 3) => (i32::from_le_bytes([0, s[0], s[1], s[2]]) >> 8) as f64 / 8_388_608.0,
            _ => i32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64 / 2_147_483_648.0,
        }
    };
    let channels = format.channels as usize;
    let frame = width * channels;
    let samples = data
        .chunks_exact(frame)
        .map(|f| {
            if channels == 1 {
                decode(f) as f32
            } else {
                (f.chunks_exact(width).map(decode).sum::<f64>() / channels as f64) as f32
            }
        })
        .collect();
    AudioClip::new(samples, format.sample_rate)
}

fn encode_float_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 4;
    let mut b = Vec::with_capacity(44 + data_len);
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&FORMAT_FLOAT.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&clip.sample_rate.to_le_bytes());
    b.extend_from_slice(&(clip.sample_rate * 4).to_le_bytes());
    b.extend_from_slice(&4u16.to_le_bytes());
    b.extend_from_slice(&32u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in &clip.samples {
        b.extend_from_slice(&s.to_le_bytes());
    }
    b
}

/// Writes a mono 32-bit IEEE float WAV. `read_wav` of the result reproduces
/// the clip bit for bit.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), encode_float_wav(clip))?;
    Ok(())
}

/// Same as [`write_wav`] into any sink.
pub fn write_wav_to<W: Write>(clip: &AudioClip, mut sink: W) -> Result<()> {
    sink.write_all(&encode_float_wav(clip))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleMethod {
    /// Windowed-sinc polyphase filter, 16 taps per phase.
    PolyphaseSinc,
    /// Two-point linear interpolation.
    Linear,
}

impl fmt::Display for ResampleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResampleMethod::PolyphaseSinc => "polyphase-sinc-16",
            ResampleMethod::Linear => "linear",
        })
    }
}

/// Taps per polyphase branch.
pub const POLYPHASE_TAPS: usize = 16;

/// Resamples with the default polyphase windowed-sinc filter.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    resample_with(clip, target_rate, ResampleMethod::PolyphaseSinc)
}

/// Output length is `floor(len * target / source)`.
pub fn resample_with(clip: &AudioClip, target_rate: u32, method: ResampleMethod) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidClip("target rate must be positive".into()));
    }
    let source_rate = clip.sample_rate;
    if target_rate == source_rate {
        return Ok(clip.clone());
    }
    let g = gcd(source_rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = source_rate as u64 / g;
    let out_len = (clip.len() as u64 * up / down) as usize;
    let x = &clip.samples;
    let samples = match method {
        ResampleMethod::Linear => (0..out_len)
            .map(|k| {
                let pos = k as u64 * down;
                let n = (pos / up) as usize;
                let frac = (pos % up) as f64 / up as f64;
                let a = x[n] as f64;
                let b = x.get(n + 1).copied().unwrap_or(0.0) as f64;
                (a + (b - a) * frac) as f32
            })
            .collect(),
        ResampleMethod::PolyphaseSinc => {
            let bank = PolyphaseBank::new(up as usize, down as usize);
            (0..out_len)
                .map(|k| {
                    let pos = k as u64 * down;
                    let n = (pos / up) as i64;
                    let phase = (pos % up) as usize;
                    let taps = bank.phase(phase);
                    let mut acc = 0.0f64;
                    for (j, &h) in taps.iter().enumerate() {
                        let idx = n + j as i64 - (POLYPHASE_TAPS as i64 / 2 - 1);
                        if idx >= 0 && (idx as usize) < x.len() {
                            acc += h * x[idx as usize] as f64;
                        }
                    }
                    acc as f32
                })
                .collect()
        }
    };
    AudioClip::new(samples, target_rate)
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Blackman-windowed sinc lowpass sampled at `up` fractional offsets. Tap `j`
/// of phase `p` weighs input sample `n + j - 7` for an output that falls
/// `p/up` of a sample after input `n`.
struct PolyphaseBank {
    taps: Vec<f64>,
}

impl PolyphaseBank {
    fn new(up: usize, down: usize) -> Self {
        let half = (POLYPHASE_TAPS / 2) as f64;
        // cutoff in cycles per input sample, relative to the input Nyquist
        let cutoff = 0.95 * (up as f64 / down as f64).min(1.0);
        let mut taps = Vec::with_capacity(up * POLYPHASE_TAPS);
        for phase in 0..up {
            let frac = phase as f64 / up as f64;
            let start = taps.len();
            for j in 0..POLYPHASE_TAPS {
                let t = j as f64 - (half - 1.0) - frac;
                let w = if t.abs() >= half {
                    0.0
                } else {
                    let a = std::f64::consts::PI * t / half;
                    0.42 + 0.5 * a.cos() + 0.08 * (2.0 * a).cos()
                };
                taps.push(cutoff * sinc(cutoff * t) * w);
            }
            let sum: f64 = taps[start..].iter().sum();
            if sum.abs() > 0.0 {
                taps[start..].iter_mut().for_each(|h| *h /= sum);
            }
        }
        Self { taps }
    }

    fn phase(&self, p: usize) -> &[f64] {
        &self.taps[p * POLYPHASE_TAPS..(p + 1) * POLYPHASE_TAPS]
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Fixed-length windowing rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationPolicy {
    pub window_seconds: f64,
    pub overlap_fraction: f64,
}

impl Default for SegmentationPolicy {
    fn default() -> Self {
        Self {
            window_seconds: 2.0,
            overlap_fraction: 0.0,
        }
    }
}

impl SegmentationPolicy {
    pub fn new(window_seconds: f64, overlap_fraction: f64) -> Result<Self> {
        let policy = Self {
            window_seconds,
            overlap_fraction,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_seconds.is_finite() && self.window_seconds > 0.0) {
            return Err(Error::Config(format!(
                "window_seconds must be positive, got {}",
                self.window_seconds
            )));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::Config(format!(
                "overlap_fraction must lie in [0, 1), got {}",
                self.overlap_fraction
            )));
        }
        Ok(())
    }

    /// `round(window_seconds * sample_rate)`.
    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_seconds * sample_rate as f64).round() as usize
    }

    /// `round(window_samples * (1 - overlap))`, at least one sample.
    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        let w = self.window_samples(sample_rate) as f64;
        ((w * (1.0 - self.overlap_fraction)).round() as usize).max(1)
    }
}

/// Cuts `clip` into windows starting at multiples of the hop. A trailing
/// remainder shorter than one window is dropped; a clip shorter than one
/// window yields no windows.
pub fn segment(clip: &AudioClip, policy: &SegmentationPolicy) -> Result<Vec<AudioClip>> {
    policy.validate()?;
    let win = policy.window_samples(clip.sample_rate);
    if win == 0 {
        return Err(Error::Size("window is shorter than one sample".into()));
    }
    let hop = policy.hop_samples(clip.sample_rate);
    Ok(segment_starts(clip.len(), win, hop)
        .map(|start| AudioClip {
            samples: clip.samples[start..start + win].to_vec(),
            sample_rate: clip.sample_rate,
        })
        .collect())
}

/// Start offsets produced by [`segment`] for a signal of `len` samples.
pub fn segment_starts(len: usize, win: usize, hop: usize) -> impl Iterator<Item = usize> {
    let count = if len < win || hop == 0 { 0 } else { (len - win) / hop + 1 };
    (0..count).map(move |k| k * hop)
}
