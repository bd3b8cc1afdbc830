use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use serde_json::json;

use spectroflow::audio_io::{read_wav, resample_with, segment, write_wav, ResampleMethod, SegmentationPolicy};
use spectroflow::augmentation::{augment_dataset, AugmentPolicy, LabeledClip, ManifestRecord};
use spectroflow::beamforming::{
    beamform_power, compute_delays, locate_peaks, simulate_scene, InspectionPlane, Interpolation, MicArray, Scene,
};
use spectroflow::cnn::{load_weights, NetworkModel, Tensor4, WeightManifest};
use spectroflow::detector::{
    decide, run_stream_chunked, run_stream_concurrent, AlwaysCough, AlwaysOthers, CnnClassifier, Feed, Localizer,
    StreamConfig, StreamSummary, WindowClassifier,
};
use spectroflow::features::{
    normalize, read_feature_file, write_feature_csv, write_feature_file, ChannelStats, FeatureExtractor, FeatureSpec,
};
use spectroflow::metrics::{accumulate, ScoreReport};
use spectroflow::{selftest as checks, AudioClip, Label, MODEL_SAMPLE_RATE};

use crate::{
    AugmentArgs, BeamformArgs, DetectArgs, FeaturesArgs, InferArgs, MetricsArgs, ModelArgs, PlaneArgs, Resampler,
    SceneArgs, Stub,
};

impl From<Resampler> for ResampleMethod {
    fn from(r: Resampler) -> Self {
        match r {
            Resampler::Polyphase => ResampleMethod::PolyphaseSinc,
            Resampler::Linear => ResampleMethod::Linear,
        }
    }
}

/// Reads a WAV file and brings it to the model rate. Returns the method used,
/// if any.
fn load_audio(path: &Path, method: ResampleMethod) -> Result<(AudioClip, Option<ResampleMethod>)> {
    let clip = read_wav(path).with_context(|| format!("reading {}", path.display()))?;
    if clip.sample_rate() == MODEL_SAMPLE_RATE {
        return Ok((clip, None));
    }
    Ok((resample_with(&clip, MODEL_SAMPLE_RATE, method)?, Some(method)))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn features(a: FeaturesArgs) -> Result<ExitCode> {
    let spec: FeatureSpec = a.spec.parse()?;
    let (clip, method) = load_audio(&a.input, a.resample.into())?;
    let source_rate = read_wav(&a.input)?.sample_rate();
    let tensor = FeatureExtractor::default().assemble(&clip, &spec)?;
    let mut out = create(&a.out)?;
    write_feature_file(&tensor, &mut out)?;
    out.flush()?;
    if let Some(csv) = &a.csv {
        let mut w = create(csv)?;
        write_feature_csv(&tensor, &mut w)?;
        w.flush()?;
    }
    let (c, h, w) = tensor.shape();
    print_json(&json!({
        "input": a.input,
        "output": a.out,
        "spec": spec.to_string(),
        "shape": [c, h, w],
        "source_rate": source_rate,
        "resample": method.map(|m| m.to_string()),
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn augment(a: AugmentArgs) -> Result<ExitCode> {
    let policy = AugmentPolicy {
        mix_ratio_range: (a.ratio_min, a.ratio_max),
        volume_range: (a.volume_min, a.volume_max),
        cough_replications: a.cough_reps,
        others_replications: a.others_reps,
        seed: a.seed,
        peak_normalize: !a.no_peak_normalize,
    };
    policy.validate()?;

    let mut events = Vec::new();
    for (label, dir, overlap) in [(Label::Cough, "cough", 0.5), (Label::Others, "others", 0.0)] {
        let seg = SegmentationPolicy::new(2.0, overlap)?;
        for path in wav_files(&a.events.join(dir))? {
            let (clip, _) = load_audio(&path, ResampleMethod::PolyphaseSinc)?;
            let pieces = segment(&clip, &seg)?;
            if pieces.is_empty() {
                log::warn!("{} is shorter than one window, skipped", path.display());
            }
            for (k, piece) in pieces.into_iter().enumerate() {
                events.push(LabeledClip::original(piece, label, format!("{dir}/{}#{k}", file_name(&path))));
            }
        }
    }
    let noise_files = wav_files(&a.noise)?;
    if noise_files.is_empty() {
        bail!("no WAV files in {}", a.noise.display());
    }
    let noises = noise_files
        .iter()
        .map(|p| load_audio(p, ResampleMethod::PolyphaseSinc).map(|(c, _)| c))
        .collect::<Result<Vec<_>>>()?;

    let output = augment_dataset(&events, &noises, &policy)?;
    fs::create_dir_all(&a.out)?;
    let mut manifest = create(&a.out.join("manifest.jsonl"))?;
    let mut counters = [0usize; 2];
    for clip in &output {
        let dir = match clip.label {
            Label::Cough => "cough",
            Label::Others => "others",
        };
        let n = &mut counters[clip.label.index()];
        let rel = format!("{dir}/{:06}.wav", *n);
        *n += 1;
        let path = a.out.join(&rel);
        fs::create_dir_all(path.parent().expect("has parent"))?;
        write_wav(&clip.clip, &path)?;
        serde_json::to_writer(&mut manifest, &ManifestRecord::new(clip, rel))?;
        writeln!(manifest)?;
    }
    manifest.flush()?;
    let meta = json!({
        "seed": a.seed,
        "policy": policy,
        "events": events.len(),
        "noise_files": noise_files.iter().map(|p| file_name(p)).collect::<Vec<_>>(),
        "outputs": output.len(),
        "cough_outputs": counters[0],
        "others_outputs": counters[1],
    });
    fs::write(a.out.join("augment.json"), serde_json::to_string_pretty(&meta)?)?;
    print_json(&meta)?;
    Ok(ExitCode::SUCCESS)
}

fn load_model(m: &ModelArgs) -> Result<(NetworkModel, Option<ChannelStats>)> {
    let path = m.weights.as_ref().context("--weights is required")?;
    let manifest: WeightManifest = serde_json::from_str(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
        .with_context(|| format!("parsing {}", path.display()))?;
    let blob_path = m.blob.clone().unwrap_or_else(|| path.with_extension("bin"));
    let blob = fs::read(&blob_path).with_context(|| format!("reading {}", blob_path.display()))?;
    let model = load_weights(manifest.kind, &manifest, &blob)?;
    let stats = match &m.stats {
        Some(p) => Some(serde_json::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?),
        None => None,
    };
    Ok((model, stats))
}

pub fn infer(a: InferArgs) -> Result<ExitCode> {
    let (model, stats) = load_model(&a.model)?;
    let is_wav = a.input.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav"));
    let (spec, probabilities) = if is_wav {
        let spec: FeatureSpec = a.spec.parse()?;
        let (clip, _) = load_audio(&a.input, ResampleMethod::PolyphaseSinc)?;
        let window_len = StreamConfig::default().window_samples();
        if clip.len() < window_len {
            bail!("{} is shorter than one {window_len}-sample window", a.input.display());
        }
        let window = clip.slice(0, window_len)?;
        let clf = CnnClassifier::new(model.clone(), spec.clone(), stats)?;
        (spec, clf.probabilities(&window)?)
    } else {
        let file = File::open(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
        let mut tensor = read_feature_file(std::io::BufReader::new(file))?;
        if let Some(s) = &stats {
            tensor = normalize(std::slice::from_ref(&tensor), s)?.remove(0);
        }
        let p = model.forward(&Tensor4::from(&tensor))?.probabilities[0];
        (tensor.spec().clone(), p)
    };
    print_json(&json!({
        "input": a.input,
        "kind": model.kind(),
        "spec": spec.to_string(),
        "p_cough": probabilities[0],
        "p_others": probabilities[1],
        "label": decide(probabilities[0], a.threshold),
    }))?;
    Ok(ExitCode::SUCCESS)
}

fn plane(p: &PlaneArgs) -> Result<InspectionPlane> {
    Ok(InspectionPlane::new(p.distance, p.width, p.height, p.cols, p.rows)?)
}

/// Loads the scene and array and simulates the microphone channels.
fn simulate(s: &SceneArgs) -> Result<(Scene, MicArray, spectroflow::beamforming::ChannelBlock)> {
    let mut scene = Scene::load(&s.scene).with_context(|| format!("loading {}", s.scene.display()))?;
    if let Some(seed) = s.seed {
        scene.seed = seed;
    }
    for src in &mut scene.sources {
        if src.signal.sample_rate() != MODEL_SAMPLE_RATE {
            src.signal = resample_with(&src.signal, MODEL_SAMPLE_RATE, ResampleMethod::PolyphaseSinc)?;
        }
    }
    let array = match &s.geometry {
        Some(p) => MicArray::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => MicArray::default(),
    };
    let samples = match s.duration {
        Some(d) if d > 0.0 => (d * MODEL_SAMPLE_RATE as f64).round() as usize,
        Some(d) => bail!("duration must be positive, got {d}"),
        None => scene.sources.iter().map(|s| s.signal.len()).max().unwrap_or(0),
    };
    let block = simulate_scene(&scene, &array, samples, MODEL_SAMPLE_RATE)?;
    Ok((scene, array, block))
}

pub fn beamform(a: BeamformArgs) -> Result<ExitCode> {
    let (scene, array, block) = simulate(&a.scene)?;
    let plane = plane(&a.plane)?;
    let fs = MODEL_SAMPLE_RATE as f64;
    let start = a.window_start.map_or(0, |t| (t * fs).round() as usize);
    let end = a.window_end.map_or(block.len(), |t| (t * fs).round() as usize);
    let interp = if a.sinc {
        Interpolation::Sinc { half_width: 8 }
    } else {
        Interpolation::Linear
    };
    let delays = compute_delays(&plane, &array, scene.c)?;
    let map = beamform_power(&block, &plane, &delays, None, interp, start, end)?;
    let peaks = locate_peaks(&map, a.peaks, a.min_separation)?;

    let with_ext = |ext: &str| {
        let mut p = a.out.clone().into_os_string();
        p.push(ext);
        PathBuf::from(p)
    };
    let mut csv = create(&with_ext(".csv"))?;
    map.write_csv(&mut csv)?;
    csv.flush()?;
    let mut pgm = create(&with_ext(".pgm"))?;
    map.write_pgm(&mut pgm)?;
    pgm.flush()?;
    let summary = json!({
        "mics": array.len(),
        "c": scene.c,
        "seed": scene.seed,
        "window": [map.window.0, map.window.1],
        "plane": plane,
        "peaks": peaks,
    });
    fs::write(with_ext(".peaks.json"), serde_json::to_string_pretty(&summary)?)?;
    print_json(&summary)?;
    Ok(ExitCode::SUCCESS)
}

pub fn detect(a: DetectArgs) -> Result<ExitCode> {
    let mut config = StreamConfig {
        window_seconds: a.window,
        hop_seconds: a.hop,
        feature_spec: a.spec.clone(),
        decision_threshold: a.threshold,
        localize: false,
        sample_rate: MODEL_SAMPLE_RATE,
    };
    config.validate()?;

    let classifier: Box<dyn WindowClassifier> = match (a.stub, &a.model.weights) {
        (Some(Stub::AlwaysCough), _) => Box::new(AlwaysCough),
        (Some(Stub::AlwaysOthers), _) => Box::new(AlwaysOthers),
        (None, Some(_)) => {
            let (model, stats) = load_model(&a.model)?;
            Box::new(CnnClassifier::new(model, config.feature_spec.parse()?, stats)?)
        }
        (None, None) => bail!("either --weights or --stub is required"),
    };

    let mut seed = None;
    let (feed, localizer) = match (&a.wav, &a.scene) {
        (Some(wav), None) => (Feed::Mono(load_audio(wav, ResampleMethod::PolyphaseSinc)?.0), None),
        (None, Some(scene)) => {
            let (scene, array, block) = simulate(&SceneArgs {
                scene: scene.clone(),
                geometry: a.geometry.clone(),
                seed: a.seed,
                duration: a.duration,
            })?;
            seed = Some(scene.seed);
            config.localize = true;
            let loc = Localizer::new(&array, plane(&a.plane)?, scene.c)?;
            (Feed::Multi(block), Some(loc))
        }
        _ => bail!("exactly one of --wav or --scene is required"),
    };

    let chunk = a.chunk.unwrap_or_else(|| config.hop_samples());
    let events = if a.concurrent {
        run_stream_concurrent(&feed, chunk, classifier.as_ref(), &config, localizer.as_ref())?
    } else {
        run_stream_chunked(&feed, chunk, classifier.as_ref(), &config, localizer.as_ref())?
    };
    let mut out = create(&a.out)?;
    for e in &events {
        serde_json::to_writer(&mut out, e)?;
        writeln!(out)?;
    }
    out.flush()?;
    let summary = StreamSummary::from_events(&events, config.hop_seconds);
    print_json(&json!({
        "summary": summary,
        "config": config,
        "seed": seed,
        "events": a.out,
    }))?;
    Ok(ExitCode::SUCCESS)
}

pub fn metrics(a: MetricsArgs) -> Result<ExitCode> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?;
    let mut pairs = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            bail!("line {}: expected `predicted,truth`, got {} fields", n + 1, record.len());
        }
        match (record[0].parse::<Label>(), record[1].parse::<Label>()) {
            (Ok(p), Ok(t)) => pairs.push((p, t)),
            _ if n == 0 => continue,
            _ => bail!("line {}: unrecognized label in `{},{}`", n + 1, &record[0], &record[1]),
        }
    }
    let report = ScoreReport::new(&accumulate(pairs))?;
    let text = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

pub fn selftest() -> Result<ExitCode> {
    let results = checks::run();
    for c in &results {
        println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(if results.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
