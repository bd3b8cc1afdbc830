//! Streaming detection: a fixed-length window buffer with overlap, per-window
//! classification, optional beamformer localization and event emission.

use std::collections::VecDeque;
use std::sync::mpsc;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioClip;
use crate::beamforming::{
    beamform_power, compute_delays, locate_peaks, ChannelBlock, InspectionPlane, Interpolation, MicArray, Peak,
};
use crate::cnn::{NetworkModel, Tensor4};
use crate::error::{Error, Result};
use crate::features::{normalize, ChannelStats, FeatureExtractor, FeatureSpec};
use crate::label::Label;
use crate::MODEL_SAMPLE_RATE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub window_seconds: f64,
    pub hop_seconds: f64,
    pub feature_spec: String,
    /// A window is Cough iff its cough probability is strictly above this.
    pub decision_threshold: f64,
    pub localize: bool,
    pub sample_rate: u32,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            window_seconds: 2.0,
            hop_seconds: 0.5,
            feature_spec: "MFCC-V-A".into(),
            decision_threshold: 0.5,
            localize: false,
            sample_rate: MODEL_SAMPLE_RATE,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_seconds > 0.0 && self.hop_seconds > 0.0) {
            return Err(Error::Config("window and hop must be positive".into()));
        }
        if self.hop_seconds > self.window_seconds {
            return Err(Error::Config(format!(
                "hop {} s exceeds window {} s",
                self.hop_seconds, self.window_seconds
            )));
        }
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.decision_threshold)));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if self.window_samples() == 0 || self.hop_samples() == 0 {
            return Err(Error::Config("window and hop must span at least one sample".into()));
        }
        self.feature_spec.parse::<FeatureSpec>()?;
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_seconds * self.sample_rate as f64).round() as usize
    }

    pub fn overlap(&self) -> f64 {
        1.0 - self.hop_seconds / self.window_seconds
    }
}

/// A full window taken from the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadyWindow {
    pub index: usize,
    /// Stream position of the first sample.
    pub start: u64,
    pub channels: Vec<Vec<f32>>,
}

/// Keeps the most recent `window` samples of each channel and hands out a
/// copy every `hop` samples once the first window has filled.
#[derive(Debug, Clone)]
pub struct StreamBuffer {
    window: usize,
    hop: usize,
    rings: Vec<VecDeque<f32>>,
    consumed: u64,
    next_end: u64,
    emitted: usize,
}

impl StreamBuffer {
    pub fn new(window: usize, hop: usize, channels: usize) -> Result<Self> {
        if window == 0 || hop == 0 || hop > window || channels == 0 {
            return Err(Error::Config(format!(
                "invalid stream buffer: window {window}, hop {hop}, channels {channels}"
            )));
        }
        Ok(Self {
            window,
            hop,
            rings: vec![VecDeque::with_capacity(window); channels],
            consumed: 0,
            next_end: window as u64,
            emitted: 0,
        })
    }

    pub fn for_config(config: &StreamConfig, channels: usize) -> Result<Self> {
        config.validate()?;
        Self::new(config.window_samples(), config.hop_samples(), channels)
    }

    /// Samples held right now; never more than one window per channel.
    pub fn buffered(&self) -> usize {
        self.rings[0].len()
    }

    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    pub fn push(&mut self, samples: &[f32]) -> Result<Vec<ReadyWindow>> {
        self.push_channels(&[samples])
    }

    /// Appends one equally long chunk per channel.
    pub fn push_channels(&mut self, chunk: &[&[f32]]) -> Result<Vec<ReadyWindow>> {
        if chunk.len() != self.rings.len() {
            return Err(Error::Shape(format!(
                "{} channels pushed into a {}-channel stream",
                chunk.len(),
                self.rings.len()
            )));
        }
        let len = chunk[0].len();
        if chunk.iter().any(|c| c.len() != len) {
            return Err(Error::Shape("channel chunks differ in length".into()));
        }
        let mut ready = Vec::new();
        let mut pos = 0;
        while pos < len {
            let take = ((self.next_end - self.consumed) as usize).min(len - pos);
            for (ring, c) in self.rings.iter_mut().zip(chunk) {
                ring.extend(&c[pos..pos + take]);
                let excess = ring.len().saturating_sub(self.window);
                ring.drain(..excess);
            }
            pos += take;
            self.consumed += take as u64;
            if self.consumed == self.next_end {
                ready.push(ReadyWindow {
                    index: self.emitted,
                    start: self.consumed - self.window as u64,
                    channels: self.rings.iter().map(|r| r.iter().copied().collect()).collect(),
                });
                self.emitted += 1;
                self.next_end += self.hop as u64;
            }
        }
        Ok(ready)
    }
}

/// Anything that maps a window of audio to `[p_cough, p_others]`.
pub trait WindowClassifier: Send + Sync {
    fn probabilities(&self, window: &AudioClip) -> Result<[f64; 2]>;
}

/// Feature extraction, optional normalization and a forward pass.
#[derive(Debug, Clone)]
pub struct CnnClassifier {
    model: NetworkModel,
    spec: FeatureSpec,
    stats: Option<ChannelStats>,
    extractor: FeatureExtractor,
}

impl CnnClassifier {
    pub fn new(model: NetworkModel, spec: FeatureSpec, stats: Option<ChannelStats>) -> Result<Self> {
        if model.in_channels() != spec.channels() {
            return Err(Error::Config(format!(
                "{} has {} input channels, feature `{spec}` has {}",
                model.kind(),
                model.in_channels(),
                spec.channels()
            )));
        }
        if let Some(s) = &stats {
            if s.channels() != spec.channels() {
                return Err(Error::Config(format!(
                    "statistics cover {} channels, feature `{spec}` has {}",
                    s.channels(),
                    spec.channels()
                )));
            }
        }
        Ok(Self {
            model,
            spec,
            stats,
            extractor: FeatureExtractor::default(),
        })
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }
}

impl WindowClassifier for CnnClassifier {
    fn probabilities(&self, window: &AudioClip) -> Result<[f64; 2]> {
        let mut tensor = self.extractor.assemble(window, &self.spec)?;
        if let Some(stats) = &self.stats {
            tensor = normalize(std::slice::from_ref(&tensor), stats)?.remove(0);
        }
        let out = self.model.forward(&Tensor4::from(&tensor))?;
        Ok(out.probabilities[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlwaysCough;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlwaysOthers;

impl WindowClassifier for AlwaysCough {
    fn probabilities(&self, _: &AudioClip) -> Result<[f64; 2]> {
        Ok([1.0, 0.0])
    }
}

impl WindowClassifier for AlwaysOthers {
    fn probabilities(&self, _: &AudioClip) -> Result<[f64; 2]> {
        Ok([0.0, 1.0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub label: Label,
    /// Cough-class probability.
    pub confidence: f64,
    pub latency_s: f64,
}

pub fn decide(p_cough: f64, threshold: f64) -> Label {
    if p_cough > threshold {
        Label::Cough
    } else {
        Label::Others
    }
}

pub fn classify_window(
    window: &AudioClip,
    classifier: &dyn WindowClassifier,
    config: &StreamConfig,
) -> Result<Classification> {
    if window.len() != config.window_samples() {
        return Err(Error::Size(format!(
            "window has {} samples, expected {}",
            window.len(),
            config.window_samples()
        )));
    }
    let start = Instant::now();
    let p = classifier.probabilities(window)?;
    let latency_s = start.elapsed().as_secs_f64();
    Ok(Classification {
        label: decide(p[0], config.decision_threshold),
        confidence: p[0],
        latency_s,
    })
}

/// Beamformer scan over a fixed plane with precomputed steering delays.
#[derive(Debug, Clone)]
pub struct Localizer {
    plane: InspectionPlane,
    delays: Array2<f64>,
    interpolation: Interpolation,
}

impl Localizer {
    pub fn new(array: &MicArray, plane: InspectionPlane, c: f64) -> Result<Self> {
        Ok(Self {
            delays: compute_delays(&plane, array, c)?,
            plane,
            interpolation: Interpolation::Linear,
        })
    }

    pub fn mic_count(&self) -> usize {
        self.delays.ncols()
    }

    pub fn plane(&self) -> &InspectionPlane {
        &self.plane
    }

    /// Strongest pixel of the power map over the whole block.
    pub fn locate(&self, block: &ChannelBlock) -> Result<Option<Peak>> {
        let map = beamform_power(block, &self.plane, &self.delays, None, self.interpolation, 0, block.len())?;
        Ok(locate_peaks(&map, 1, 1.0)?.into_iter().next())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub power: f64,
}

impl From<Peak> for Location {
    fn from(p: Peak) -> Self {
        Self {
            x: p.position[0],
            y: p.position[1],
            z: p.position[2],
            power: p.power,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub t_start: f64,
    pub t_end: f64,
    pub label: Label,
    pub confidence: f64,
    pub location: Option<Location>,
    /// Wall-clock processing time of the window.
    pub latency_s: f64,
}

impl DetectionEvent {
    /// Equal in everything except the measured latency.
    pub fn same_outcome(&self, other: &DetectionEvent) -> bool {
        self.t_start == other.t_start
            && self.t_end == other.t_end
            && self.label == other.label
            && self.confidence == other.confidence
            && self.location == other.location
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub windows: usize,
    pub cough_count: usize,
    pub mean_latency_s: f64,
    pub max_latency_s: f64,
    /// Windows whose processing took longer than the hop.
    pub deadline_misses: usize,
}

impl StreamSummary {
    pub fn from_events(events: &[DetectionEvent], hop_seconds: f64) -> Self {
        let n = events.len();
        let total: f64 = events.iter().map(|e| e.latency_s).sum();
        Self {
            windows: n,
            cough_count: events.iter().filter(|e| e.label == Label::Cough).count(),
            mean_latency_s: if n == 0 { 0.0 } else { total / n as f64 },
            max_latency_s: events.iter().map(|e| e.latency_s).fold(0.0, f64::max),
            deadline_misses: events.iter().filter(|e| e.latency_s > hop_seconds).count(),
        }
    }
}

/// Input to the detector. The classifier sees channel 0 of a multichannel
/// feed; the beamformer sees all channels.
#[derive(Debug, Clone)]
pub enum Feed {
    Mono(AudioClip),
    Multi(ChannelBlock),
}

impl Feed {
    fn sample_rate(&self) -> u32 {
        match self {
            Feed::Mono(c) => c.sample_rate(),
            Feed::Multi(b) => b.sample_rate(),
        }
    }

    fn channels(&self) -> Vec<&[f32]> {
        match self {
            Feed::Mono(c) => vec![c.samples()],
            Feed::Multi(b) => b.channels().iter().map(|c| c.as_slice()).collect(),
        }
    }
}

struct Detector<'a> {
    classifier: &'a dyn WindowClassifier,
    config: &'a StreamConfig,
    localizer: Option<&'a Localizer>,
}

impl Detector<'_> {
    fn process(&self, window: ReadyWindow) -> Result<DetectionEvent> {
        let started = Instant::now();
        let fs = self.config.sample_rate;
        let len = window.channels[0].len();
        let mut channels = window.channels;
        let reference = AudioClip::new(channels[0].clone(), fs)?;
        let class = classify_window(&reference, self.classifier, self.config)?;
        let location = match self.localizer {
            Some(loc) if self.config.localize && class.label == Label::Cough => {
                let block = ChannelBlock::new(std::mem::take(&mut channels), fs)?;
                loc.locate(&block)?.map(Location::from)
            }
            _ => None,
        };
        let latency_s = started.elapsed().as_secs_f64();
        let hop = self.config.hop_seconds;
        if latency_s > hop {
            log::warn!(
                "window {} took {:.3} s, over the {:.3} s hop deadline",
                window.index,
                latency_s,
                hop
            );
        }
        Ok(DetectionEvent {
            t_start: window.start as f64 / fs as f64,
            t_end: (window.start + len as u64) as f64 / fs as f64,
            label: class.label,
            confidence: class.confidence,
            location,
            latency_s,
        })
    }
}

fn prepare<'a>(
    feed: &Feed,
    classifier: &'a dyn WindowClassifier,
    config: &'a StreamConfig,
    localizer: Option<&'a Localizer>,
) -> Result<(Detector<'a>, StreamBuffer)> {
    config.validate()?;
    if feed.sample_rate() != config.sample_rate {
        return Err(Error::Config(format!(
            "feed is {} Hz, detector runs at {} Hz",
            feed.sample_rate(),
            config.sample_rate
        )));
    }
    let channels = feed.channels().len();
    if config.localize {
        let loc = localizer.ok_or_else(|| Error::Config("localization requested without an array".into()))?;
        if loc.mic_count() != channels {
            return Err(Error::Config(format!(
                "array has {} microphones, feed has {channels} channels",
                loc.mic_count()
            )));
        }
    }
    Ok((
        Detector {
            classifier,
            config,
            localizer,
        },
        StreamBuffer::for_config(config, channels)?,
    ))
}

fn chunks<'f>(feed: &'f [&'f [f32]], chunk: usize) -> impl Iterator<Item = Vec<&'f [f32]>> + 'f {
    let len = feed[0].len();
    (0..len)
        .step_by(chunk)
        .map(move |s| feed.iter().map(|c| &c[s..(s + chunk).min(len)]).collect())
}

/// Pushes `feed` through the window buffer in chunks of `chunk` samples and
/// processes each window as it becomes ready. Events come out in window order.
pub fn run_stream_chunked(
    feed: &Feed,
    chunk: usize,
    classifier: &dyn WindowClassifier,
    config: &StreamConfig,
    localizer: Option<&Localizer>,
) -> Result<Vec<DetectionEvent>> {
    if chunk == 0 {
        return Err(Error::Config("chunk size must be positive".into()));
    }
    let (detector, mut buffer) = prepare(feed, classifier, config, localizer)?;
    let channels = feed.channels();
    let mut events = Vec::new();
    for piece in chunks(&channels, chunk) {
        for window in buffer.push_channels(&piece)? {
            events.push(detector.process(window)?);
        }
    }
    Ok(events)
}

/// [`run_stream_chunked`] with one hop per push.
pub fn run_stream(
    feed: &Feed,
    classifier: &dyn WindowClassifier,
    config: &StreamConfig,
    localizer: Option<&Localizer>,
) -> Result<Vec<DetectionEvent>> {
    run_stream_chunked(feed, config.hop_samples().max(1), classifier, config, localizer)
}

/// Buffering on a producer thread, processing on the caller's thread, joined
/// by a bounded window queue. Events equal those of [`run_stream_chunked`]
/// apart from measured latencies.
pub fn run_stream_concurrent(
    feed: &Feed,
    chunk: usize,
    classifier: &dyn WindowClassifier,
    config: &StreamConfig,
    localizer: Option<&Localizer>,
) -> Result<Vec<DetectionEvent>> {
    if chunk == 0 {
        return Err(Error::Config("chunk size must be positive".into()));
    }
    let (detector, mut buffer) = prepare(feed, classifier, config, localizer)?;
    let channels = feed.channels();
    let (tx, rx) = mpsc::sync_channel::<ReadyWindow>(2);
    std::thread::scope(|scope| {
        let producer = scope.spawn(move || -> Result<()> {
            for piece in chunks(&channels, chunk) {
                for window in buffer.push_channels(&piece)? {
                    if tx.send(window).is_err() {
                        return Ok(());
                    }
                }
            }
            Ok(())
        });
        let mut events = Vec::new();
        let mut failure = None;
        for window in rx {
            match detector.process(window) {
                Ok(e) => events.push(e),
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        producer.join().expect("producer thread panicked")?;
        match failure {
            Some(e) => Err(e),
            None => Ok(events),
        }
    })
}
