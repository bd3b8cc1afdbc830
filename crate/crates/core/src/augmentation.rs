//! Background-noise mixing, class-dependent replication and zero-energy
//! exclusion, plus the seeded train/validation split.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioClip;
use crate::error::{Error, Result};
use crate::label::Label;

/// Total-energy threshold below which a clip counts as silent.
pub const ZERO_ENERGY_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub mix_ratio_range: (f64, f64),
    pub volume_range: (f64, f64),
    pub cough_replications: usize,
    pub others_replications: usize,
    pub seed: u64,
    /// Scale event and noise to unit peak before mixing.
    pub peak_normalize: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            mix_ratio_range: (0.0, 0.4),
            volume_range: (0.6, 1.0),
            cough_replications: 45,
            others_replications: 9,
            seed: 0,
            peak_normalize: true,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        let (rlo, rhi) = self.mix_ratio_range;
        if !(0.0 <= rlo && rlo <= rhi && rhi <= 1.0) {
            return Err(Error::Config(format!("mix ratio range [{rlo}, {rhi}] must satisfy 0 <= lo <= hi <= 1")));
        }
        let (vlo, vhi) = self.volume_range;
        if !(0.0 < vlo && vlo <= vhi && vhi <= 1.0) {
            return Err(Error::Config(format!("volume range [{vlo}, {vhi}] must satisfy 0 < lo <= hi <= 1")));
        }
        if self.cough_replications == 0 || self.others_replications == 0 {
            return Err(Error::Config("replication counts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn replications(&self, label: Label) -> usize {
        match label {
            Label::Cough => self.cough_replications,
            Label::Others => self.others_replications,
        }
    }
}

/// Parameters that produced one augmented clip. Together with the source clip
/// and the noise pool they regenerate it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixRecord {
    /// Index into the noise list as passed in, before filtering.
    pub noise_id: usize,
    pub r: f64,
    pub v: f64,
    pub seed: u64,
    /// Random stream of this output: its position in the output sequence.
    pub stream: u64,
    /// First noise sample used (crop offset, or 0 when tiled).
    pub noise_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub mix: Option<MixRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub clip: AudioClip,
    pub label: Label,
    pub provenance: Provenance,
}

impl LabeledClip {
    pub fn original(clip: AudioClip, label: Label, source_id: impl Into<String>) -> Self {
        Self {
            clip,
            label,
            provenance: Provenance {
                source_id: source_id.into(),
                mix: None,
            },
        }
    }
}

/// One JSON-lines manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub source_id: String,
    pub label: Label,
    pub noise_id: Option<usize>,
    pub r: Option<f64>,
    pub v: Option<f64>,
    pub seed: Option<u64>,
    pub output_path: String,
}

impl ManifestRecord {
    pub fn new(clip: &LabeledClip, output_path: impl Into<String>) -> Self {
        let mix = clip.provenance.mix;
        Self {
            source_id: clip.provenance.source_id.clone(),
            label: clip.label,
            noise_id: mix.map(|m| m.noise_id),
            r: mix.map(|m| m.r),
            v: mix.map(|m| m.v),
            seed: mix.map(|m| m.seed),
            output_path: output_path.into(),
        }
    }
}

pub fn is_zero_energy(clip: &AudioClip) -> bool {
    clip.energy() <= ZERO_ENERGY_EPSILON
}

/// `v * ((1 - r) * event + r * noise)`, sample-wise.
pub fn mix(event: &AudioClip, noise: &AudioClip, r: f64, v: f64) -> Result<AudioClip> {
    if event.len() != noise.len() {
        return Err(Error::Shape(format!(
            "event has {} samples, noise has {}",
            event.len(),
            noise.len()
        )));
    }
    if event.sample_rate() != noise.sample_rate() {
        return Err(Error::Shape(format!(
            "event rate {} Hz, noise rate {} Hz",
            event.sample_rate(),
            noise.sample_rate()
        )));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Config(format!("mix ratio {r} outside [0, 1]")));
    }
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::Config(format!("volume {v} outside (0, 1]")));
    }
    let out = event
        .samples()
        .iter()
        .zip(noise.samples())
        .map(|(&e, &n)| (v * ((1.0 - r) * e as f64 + r * n as f64)) as f32)
        .collect();
    AudioClip::new(out, event.sample_rate())
}

fn peak_normalized(samples: &[f32]) -> Vec<f32> {
    let peak = samples.iter().fold(0.0f32, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        samples.iter().map(|s| s / peak).collect()
    } else {
        samples.to_vec()
    }
}

/// Fits `noise` to `len` samples: tiled if shorter, cropped at `offset` if longer.
fn fit_noise(noise: &[f32], len: usize, offset: usize) -> Vec<f32> {
    if noise.len() >= len {
        noise[offset..offset + len].to_vec()
    } else {
        noise.iter().copied().cycle().take(len).collect()
    }
}

/// Random stream for output `stream` under `seed`.
pub fn clip_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes every event with `replications(label)` seeded noise draws. Outputs
/// appear in input order, replications consecutive; mixes that end up with
/// zero energy are dropped.
pub fn augment_dataset(events: &[LabeledClip], noises: &[AudioClip], policy: &AugmentPolicy) -> Result<Vec<LabeledClip>> {
    policy.validate()?;
    if events.is_empty() {
        return Ok(Vec::new());
    }
    let pool: Vec<usize> = (0..noises.len()).filter(|&i| !is_zero_energy(&noises[i])).collect();
    if pool.is_empty() {
        return Err(Error::Empty("no noise clip with non-zero energy".into()));
    }
    if let Some(e) = events.iter().find(|e| e.clip.sample_rate() != noises[pool[0]].sample_rate()) {
        return Err(Error::Shape(format!(
            "event `{}` at {} Hz, noise at {} Hz",
            e.provenance.source_id,
            e.clip.sample_rate(),
            noises[pool[0]].sample_rate()
        )));
    }
    if let Some(&i) = pool.iter().find(|&&i| noises[i].sample_rate() != noises[pool[0]].sample_rate()) {
        return Err(Error::Shape(format!("noise {i} has a different sample rate")));
    }

    let mut jobs = Vec::new();
    for (e, event) in events.iter().enumerate() {
        for _ in 0..policy.replications(event.label) {
            jobs.push(e);
        }
    }
    let (rlo, rhi) = policy.mix_ratio_range;
    let (vlo, vhi) = policy.volume_range;

    let mixed: Vec<Result<Option<LabeledClip>>> = jobs
        .par_iter()
        .enumerate()
        .map(|(stream, &e)| {
            let event = &events[e];
            let mut rng = clip_rng(policy.seed, stream as u64);
            let noise_id = pool[rng.random_range(0..pool.len())];
            let r = rng.random_range(rlo..=rhi);
            let v = rng.random_range(vlo..=vhi);
            let noise = noises[noise_id].samples();
            let len = event.clip.len();
            let noise_offset = if noise.len() > len { rng.random_range(0..=noise.len() - len) } else { 0 };
            let mut fitted = fit_noise(noise, len, noise_offset);
            let mut source = event.clip.samples().to_vec();
            if policy.peak_normalize {
                source = peak_normalized(&source);
                fitted = peak_normalized(&fitted);
            }
            let rate = event.clip.sample_rate();
            let clip = mix(&AudioClip::new(source, rate)?, &AudioClip::new(fitted, rate)?, r, v)?;
            if is_zero_energy(&clip) {
                return Ok(None);
            }
            Ok(Some(LabeledClip {
                clip,
                label: event.label,
                provenance: Provenance {
                    source_id: event.provenance.source_id.clone(),
                    mix: Some(MixRecord {
                        noise_id,
                        r,
                        v,
                        seed: policy.seed,
                        stream: stream as u64,
                        noise_offset,
                    }),
                },
            }))
        })
        .collect();

    let mut out = Vec::with_capacity(mixed.len());
    for m in mixed {
        if let Some(c) = m? {
            out.push(c);
        }
    }
    Ok(out)
}

/// Seeded shuffle, then the first `round(fraction * N)` items go to training.
pub fn split_train_valid<T>(mut data: Vec<T>, fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    data.shuffle(&mut rng);
    let cut = split_point(data.len(), fraction);
    let valid = data.split_off(cut);
    Ok((data, valid))
}

pub fn split_point(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n)
}
