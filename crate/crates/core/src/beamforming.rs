//! Time-domain delay-and-sum imaging over a virtual inspection plane:
//! array geometry, steering delays, beamformer output, power maps, a simple
//! free-field scene simulator and peak picking.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_io::{read_wav, AudioClip};
use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_MIC_COUNT: usize = 112;
pub const DEFAULT_ARRAY_RADIUS: f64 = 0.1;
/// Spreading loss is clamped at this distance (meters).
pub const MIN_SPREADING_DISTANCE: f64 = 0.1;

pub type Vec3 = [f64; 3];

fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Microphone positions in meters, array plane z = 0, origin at the center.
#[derive(Debug, Clone, PartialEq)]
pub struct MicArray {
    positions: Vec<Vec3>,
}

impl MicArray {
    pub fn new(positions: Vec<Vec3>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Config("microphone array needs at least one element".into()));
        }
        if let Some(p) = positions.iter().flatten().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite microphone coordinate {p}")));
        }
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                if norm(sub(positions[i], positions[j])) < 1e-9 {
                    return Err(Error::Config(format!("microphones {i} and {j} coincide")));
                }
            }
        }
        Ok(Self { positions })
    }

    /// Single-arm Archimedean spiral (radius proportional to angle) with
    /// `count` elements spread over three turns, outermost at `radius`.
    pub fn spiral(count: usize, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Config(format!("array radius must be positive, got {radius}")));
        }
        const TURNS: f64 = 3.0;
        let positions = (0..count)
            .map(|k| {
                let u = (k as f64 + 1.0) / count as f64;
                let theta = 2.0 * std::f64::consts::PI * TURNS * u;
                [radius * u * theta.cos(), radius * u * theta.sin(), 0.0]
            })
            .collect();
        Self::new(positions)
    }

    /// Reads rows of `x,y,z` in meters. Blank lines and a non-numeric header
    /// row are skipped.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut positions = Vec::new();
        for (n, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
            match parsed {
                Ok(v) if v.len() == 3 => positions.push([v[0], v[1], v[2]]),
                Err(_) if n == 0 => continue,
                _ => return Err(Error::Config(format!("geometry line {}: expected x,y,z, got `{line}`", n + 1))),
            }
        }
        Self::new(positions)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,y,z")?;
        for p in &self.positions {
            writeln!(out, "{},{},{}", p[0], p[1], p[2])?;
        }
        Ok(())
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Largest distance between two elements.
    pub fn aperture(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.positions.iter().enumerate() {
            for b in &self.positions[i + 1..] {
                best = best.max(norm(sub(*a, *b)));
            }
        }
        best
    }
}

impl Default for MicArray {
    fn default() -> Self {
        Self::spiral(DEFAULT_MIC_COUNT, DEFAULT_ARRAY_RADIUS).expect("default spiral is valid")
    }
}

/// Axis-aligned rectangle at `distance` meters in front of the array, centered
/// on the boresight and cut into `rows x cols` pixels. Row index grows with y,
/// column index with x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InspectionPlane {
    pub distance: f64,
    pub width: f64,
    pub height: f64,
    pub cols: usize,
    pub rows: usize,
}

impl InspectionPlane {
    pub fn new(distance: f64, width: f64, height: f64, cols: usize, rows: usize) -> Result<Self> {
        let plane = Self {
            distance,
            width,
            height,
            cols,
            rows,
        };
        plane.validate()?;
        Ok(plane)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance > 0.0 && self.width > 0.0 && self.height > 0.0) {
            return Err(Error::Config("plane distance, width and height must be positive".into()));
        }
        if self.cols == 0 || self.rows == 0 {
            return Err(Error::Config("plane needs at least one pixel".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> Vec3 {
        [
            -self.width / 2.0 + (col as f64 + 0.5) * self.width / self.cols as f64,
            -self.height / 2.0 + (row as f64 + 0.5) * self.height / self.rows as f64,
            self.distance,
        ]
    }

    /// Pixel containing the projection of `p` onto the plane, if inside.
    pub fn pixel_of(&self, p: Vec3) -> Option<(usize, usize)> {
        let col = ((p[0] + self.width / 2.0) / self.width * self.cols as f64).floor();
        let row = ((p[1] + self.height / 2.0) / self.height * self.rows as f64).floor();
        if col < 0.0 || row < 0.0 || col >= self.cols as f64 || row >= self.rows as f64 {
            return None;
        }
        Some((row as usize, col as usize))
    }

    pub fn centers(&self) -> Vec<Vec3> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .map(|(r, c)| self.pixel_center(r, c))
            .collect()
    }
}

/// `(|x| - |x - m|) / c`.
pub fn steering_delay(x: Vec3, m: Vec3, c: f64) -> f64 {
    (norm(x) - norm(sub(x, m))) / c
}

/// Steering delays in seconds, shape (pixels, mics), pixels in row-major order.
pub fn compute_delays(plane: &InspectionPlane, array: &MicArray, c: f64) -> Result<Array2<f64>> {
    if !(c > 0.0) {
        return Err(Error::Config(format!("speed of sound must be positive, got {c}")));
    }
    plane.validate()?;
    let centers = plane.centers();
    Ok(Array2::from_shape_fn((centers.len(), array.len()), |(p, n)| {
        steering_delay(centers[p], array.positions[n], c)
    }))
}

/// Equal-length channels sharing one sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBlock {
    channels: Vec<Vec<f32>>,
    sample_rate: u32,
}

impl ChannelBlock {
    pub fn new(channels: Vec<Vec<f32>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Shape("no channels".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        let len = channels[0].len();
        if let Some(i) = channels.iter().position(|c| c.len() != len) {
            return Err(Error::Shape(format!(
                "channel {i} has {} samples, channel 0 has {len}",
                channels[i].len()
            )));
        }
        Ok(Self { channels, sample_rate })
    }

    pub fn channels(&self) -> &[Vec<f32>] {
        &self.channels
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, n: usize) -> Result<AudioClip> {
        AudioClip::new(self.channels[n].clone(), self.sample_rate)
    }

    /// Samples `[start, start + len)` of every channel.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::Size(format!(
                "slice {start}..{} exceeds {} samples",
                start + len,
                self.len()
            )));
        }
        Ok(Self {
            channels: self.channels.iter().map(|c| c[start..start + len].to_vec()).collect(),
            sample_rate: self.sample_rate,
        })
    }
}

/// Fractional-delay realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Interpolation {
    #[default]
    Linear,
    /// Blackman-windowed sinc with `half_width` taps on each side.
    Sinc { half_width: usize },
}

/// Taps `(offset, weight)` realizing a read at `t + shift` for real `shift`.
fn fractional_taps(shift: f64, interp: Interpolation, taps: &mut Vec<(isize, f64)>) {
    taps.clear();
    let k0 = shift.floor();
    let frac = shift - k0;
    let k0 = k0 as isize;
    match interp {
        Interpolation::Linear => {
            taps.push((k0, 1.0 - frac));
            if frac > 0.0 {
                taps.push((k0 + 1, frac));
            }
        }
        Interpolation::Sinc { half_width } => {
            if frac == 0.0 {
                taps.push((k0, 1.0));
                return;
            }
            let h = half_width.max(1) as isize;
            let span = 2.0 * h as f64;
            for k in (1 - h)..=h {
                let x = k as f64 - frac;
                let sinc = {
                    let px = std::f64::consts::PI * x;
                    px.sin() / px
                };
                let u = (x + h as f64) / span;
                let w = 0.42 - 0.5 * (2.0 * std::f64::consts::PI * u).cos() + 0.08 * (4.0 * std::f64::consts::PI * u).cos();
                taps.push((k0 + k, sinc * w));
            }
        }
    }
}

/// `out[j] += w * s[t0 + j + offset]`, treating out-of-range reads as zero.
fn accumulate_shifted(out: &mut [f64], t0: usize, s: &[f32], offset: isize, w: f64) {
    let first = t0 as isize + offset;
    let lo = (-first).max(0) as usize;
    let hi = ((s.len() as isize - first).max(0) as usize).min(out.len());
    if lo >= hi {
        return;
    }
    let src = &s[(first + lo as isize) as usize..(first + hi as isize) as usize];
    for (o, &x) in out[lo..hi].iter_mut().zip(src) {
        *o += w * x as f64;
    }
}

fn check_inputs(signals: &ChannelBlock, delays: &Array2<f64>, weights: Option<&[f64]>) -> Result<()> {
    if delays.ncols() != signals.channel_count() {
        return Err(Error::Shape(format!(
            "delays cover {} microphones, got {} channels",
            delays.ncols(),
            signals.channel_count()
        )));
    }
    if let Some(w) = weights {
        if w.len() != signals.channel_count() {
            return Err(Error::Shape(format!("{} weights for {} channels", w.len(), signals.channel_count())));
        }
    }
    Ok(())
}

/// Beamformer output for one pixel over samples `[t0, t0 + out.len())`.
fn steer_pixel(
    signals: &ChannelBlock,
    delays: ndarray::ArrayView1<f64>,
    weights: Option<&[f64]>,
    interp: Interpolation,
    t0: usize,
    out: &mut [f64],
    taps: &mut Vec<(isize, f64)>,
) {
    out.fill(0.0);
    let fs = signals.sample_rate as f64;
    for (n, s) in signals.channels.iter().enumerate() {
        let a = weights.map_or(1.0, |w| w[n]);
        if a == 0.0 {
            continue;
        }
        fractional_taps(-delays[n] * fs, interp, taps);
        for &(offset, w) in taps.iter() {
            accumulate_shifted(out, t0, s, offset, a * w);
        }
    }
}

/// `B(t, X_p) = sum_n a_n s_n[t - tau_n(X_p)]` for every pixel, shape
/// (pixels, samples). Reads outside the signal are zero. `weights` defaults
/// to unity. Memory grows with pixels x samples; [`beamform_power`] computes
/// the power map without storing the series.
pub fn das_beamform(
    signals: &ChannelBlock,
    delays: &Array2<f64>,
    weights: Option<&[f64]>,
    interp: Interpolation,
) -> Result<Array2<f64>> {
    check_inputs(signals, delays, weights)?;
    let len = signals.len();
    let mut out = Array2::zeros((delays.nrows(), len));
    let slice = out.as_slice_mut().expect("standard layout");
    if len > 0 {
        slice.par_chunks_mut(len).enumerate().for_each_init(Vec::new, |taps, (p, row)| {
            steer_pixel(signals, delays.row(p), weights, interp, 0, row, taps);
        });
    }
    Ok(out)
}

/// Per-pixel mean-square beamformer output over a time window.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMap {
    /// Shape (rows, cols).
    pub values: Array2<f64>,
    pub plane: InspectionPlane,
    /// Window bounds in seconds.
    pub window: (f64, f64),
}

fn check_window(start: usize, end: usize, len: usize) -> Result<()> {
    if start >= end {
        return Err(Error::Empty(format!("power window {start}..{end} is empty")));
    }
    if end > len {
        return Err(Error::Size(format!("power window ends at {end}, series has {len} samples")));
    }
    Ok(())
}

/// Mean of `B^2` over samples `[start, end)` for each pixel of `series`.
pub fn power_map(
    series: &Array2<f64>,
    plane: &InspectionPlane,
    start: usize,
    end: usize,
    sample_rate: u32,
) -> Result<PowerMap> {
    if series.nrows() != plane.pixel_count() {
        return Err(Error::Shape(format!(
            "{} pixel series for a {}x{} plane",
            series.nrows(),
            plane.rows,
            plane.cols
        )));
    }
    check_window(start, end, series.ncols())?;
    let n = (end - start) as f64;
    let values: Vec<f64> = series
        .rows()
        .into_iter()
        .map(|r| r.iter().skip(start).take(end - start).map(|b| b * b).sum::<f64>() / n)
        .collect();
    let fs = sample_rate as f64;
    Ok(PowerMap {
        values: Array2::from_shape_vec((plane.rows, plane.cols), values).expect("pixel count checked"),
        plane: *plane,
        window: (start as f64 / fs, end as f64 / fs),
    })
}

/// Steering and power evaluation fused per pixel: equal to
/// `power_map(das_beamform(..))` without the per-pixel series in memory.
pub fn beamform_power(
    signals: &ChannelBlock,
    plane: &InspectionPlane,
    delays: &Array2<f64>,
    weights: Option<&[f64]>,
    interp: Interpolation,
    start: usize,
    end: usize,
) -> Result<PowerMap> {
    check_inputs(signals, delays, weights)?;
    if delays.nrows() != plane.pixel_count() {
        return Err(Error::Shape(format!(
            "delays cover {} pixels, plane has {}",
            delays.nrows(),
            plane.pixel_count()
        )));
    }
    check_window(start, end, signals.len())?;
    let n = (end - start) as f64;
    let values: Vec<f64> = (0..delays.nrows())
        .into_par_iter()
        .map_init(
            || (vec![0.0f64; end - start], Vec::new()),
            |(buf, taps), p| {
                steer_pixel(signals, delays.row(p), weights, interp, start, buf, taps);
                buf.iter().map(|b| b * b).sum::<f64>() / n
            },
        )
        .collect();
    let fs = signals.sample_rate as f64;
    Ok(PowerMap {
        values: Array2::from_shape_vec((plane.rows, plane.cols), values).expect("pixel count checked"),
        plane: *plane,
        window: (start as f64 / fs, end as f64 / fs),
    })
}

impl PowerMap {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.values.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Binary 8-bit PGM, min-max scaled, first row at the top.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        write!(out, "P5\n{} {}\n255\n", self.plane.cols, self.plane.rows)?;
        let bytes: Vec<u8> = self
            .values
            .iter()
            .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
            .collect();
        out.write_all(&bytes)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub row: usize,
    pub col: usize,
    pub position: Vec3,
    pub power: f64,
}

/// Greedy non-maximum suppression over the local maxima of `map`: take the
/// strongest remaining local maximum, drop every candidate closer than
/// `min_separation` pixels, repeat until `count` peaks are found. Pixels with
/// zero power are never reported.
pub fn locate_peaks(map: &PowerMap, count: usize, min_separation: f64) -> Result<Vec<Peak>> {
    if count == 0 {
        return Err(Error::Config("peak count must be at least 1".into()));
    }
    let v = &map.values;
    let (rows, cols) = v.dim();
    let mut candidates = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let x = v[[r, c]];
            if !(x > 0.0) {
                continue;
            }
            let mut is_max = true;
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if (dr, dc) == (0, 0) || rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
                        continue;
                    }
                    if v[[rr as usize, cc as usize]] > x {
                        is_max = false;
                    }
                }
            }
            if is_max {
                candidates.push((r, c, x));
            }
        }
    }
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let mut peaks: Vec<Peak> = Vec::new();
    for (r, c, x) in candidates {
        if peaks.len() == count {
            break;
        }
        let clear = peaks.iter().all(|p| {
            let dr = p.row as f64 - r as f64;
            let dc = p.col as f64 - c as f64;
            (dr * dr + dc * dc).sqrt() >= min_separation
        });
        if clear {
            peaks.push(Peak {
                row: r,
                col: c,
                position: map.plane.pixel_center(r, c),
                power: x,
            });
        }
    }
    Ok(peaks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub position: Vec3,
    pub signal: AudioClip,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub sources: Vec<Source>,
    pub noise_floor: f64,
    pub c: f64,
    /// Seed of the sensor-noise generator.
    pub seed: u64,
}

impl Scene {
    pub fn new(sources: Vec<Source>) -> Self {
        Self {
            sources,
            noise_floor: 0.0,
            c: SPEED_OF_SOUND,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::Config(format!("speed of sound must be positive, got {}", self.c)));
        }
        if !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return Err(Error::Config(format!("noise floor must be non-negative, got {}", self.noise_floor)));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if !(s.position[2] > 0.0) {
                return Err(Error::Config(format!("source {i} is not in front of the array")));
            }
        }
        Ok(())
    }

    /// Loads a scene description; relative `wav_path`s resolve against the
    /// directory of the JSON file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let config: SceneConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        config.resolve(path.parent().unwrap_or(Path::new(".")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub position: Vec3,
    pub wav_path: PathBuf,
    #[serde(default = "unit_gain")]
    pub gain: f64,
}

fn unit_gain() -> f64 {
    1.0
}

fn default_c() -> f64 {
    SPEED_OF_SOUND
}

/// On-disk scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub sources: Vec<SourceConfig>,
    #[serde(default)]
    pub noise_floor: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SceneConfig {
    pub fn resolve(&self, base: &Path) -> Result<Scene> {
        let sources = self
            .sources
            .iter()
            .map(|s| {
                Ok(Source {
                    position: s.position,
                    signal: read_wav(base.join(&s.wav_path))?,
                    gain: s.gain,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scene = Scene {
            sources,
            noise_floor: self.noise_floor,
            c: self.c,
            seed: self.seed,
        };
        scene.validate()?;
        Ok(scene)
    }
}

/// Free-field propagation to every microphone: each source arrives delayed by
/// `d / c` and scaled by `gain / max(d, 0.1)`, where `d` is the source-mic
/// distance, plus seeded white noise of standard deviation `noise_floor`.
/// Fractional delays use linear interpolation.
pub fn simulate_scene(scene: &Scene, array: &MicArray, samples: usize, sample_rate: u32) -> Result<ChannelBlock> {
    scene.validate()?;
    if let Some(s) = scene.sources.iter().find(|s| s.signal.sample_rate() != sample_rate) {
        return Err(Error::Shape(format!(
            "source at {} Hz, simulation at {sample_rate} Hz",
            s.signal.sample_rate()
        )));
    }
    let fs = sample_rate as f64;
    let noise = if scene.noise_floor > 0.0 {
        Some(Normal::new(0.0, scene.noise_floor).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let channels: Vec<Vec<f32>> = array
        .positions
        .par_iter()
        .enumerate()
        .map_init(Vec::new, |taps, (n, &m)| {
            let mut acc = vec![0.0f64; samples];
            for src in &scene.sources {
                let d = norm(sub(src.position, m));
                let amp = src.gain / d.max(MIN_SPREADING_DISTANCE);
                fractional_taps(-d / scene.c * fs, Interpolation::Linear, taps);
                for &(offset, w) in taps.iter() {
                    accumulate_shifted(&mut acc, 0, src.signal.samples(), offset, amp * w);
                }
            }
            if let Some(dist) = noise {
                let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
                rng.set_stream(n as u64);
                for a in &mut acc {
                    *a += dist.sample(&mut rng);
                }
            }
            acc.into_iter().map(|x| x as f32).collect()
        })
        .collect();
    ChannelBlock::new(channels, sample_rate)
}
