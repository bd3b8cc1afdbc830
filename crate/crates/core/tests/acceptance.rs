//! Acceptance criteria, one report line each. Runs without the libtest
//! harness so the lines always reach the console; exits non-zero if any
//! criterion fails.

mod common;

use std::time::{Duration, Instant};

use ndarray::{array, Array2};
use rand::Rng;
use spectroflow::audio_io::{write_wav_to, AudioClip};
use spectroflow::augmentation::{augment_dataset, mix, AugmentPolicy, LabeledClip, ManifestRecord};
use spectroflow::beamforming::{
    beamform_power, compute_delays, das_beamform, locate_peaks, simulate_scene, steering_delay, ChannelBlock,
    InspectionPlane, Interpolation, MicArray, Scene, Source, SPEED_OF_SOUND,
};
use spectroflow::cnn::{build_network, conv2d, group_norm, NetworkKind, NetworkModel, Tensor4};
use spectroflow::detector::{run_stream_chunked, CnnClassifier, Feed, StreamBuffer, StreamConfig};
use spectroflow::features::{
    acceleration_map, compute_channel_stats, normalize, velocity_map, BaseFeature, FeatureExtractor, FeaturePlane,
    FeatureSpec, PlaneKind,
};
use spectroflow::metrics::{compute, ConfusionMatrix};
use spectroflow::Label;

const PERCENT_TOLERANCE: f64 = 0.1;
const CONV_RELATIVE_TOLERANCE: f64 = 1e-5;
const DELAY_TOLERANCE_S: f64 = 1e-9;
const STATED_DELAY_S: f64 = -1.4546e-5;
const COHERENT_GAIN_TOLERANCE: f64 = 0.05;
const LOCALIZATION_TOLERANCE_PX: usize = 1;
const WINDOW_DEADLINE_S: f64 = 0.5;
const NORMALIZED_MEAN_TOLERANCE: f64 = 1e-6;
const NORMALIZED_STD_TOLERANCE: f64 = 1e-4;

/// Criteria whose stated target is inconsistent with its own formula. They
/// still report FAIL; an unexpected pass is treated as an error.
const KNOWN_UNATTAINABLE: &[usize] = &[7];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

type Criterion = fn() -> Outcome;

fn metrics_reproduction() -> Outcome {
    let rows = [
        (ConfusionMatrix::new(36, 4, 4, 156), [96.0, 90.0, 90.0, 90.0]),
        (ConfusionMatrix::new(36, 28, 4, 132), [84.0, 90.0, 56.3, 69.2]),
    ];
    let mut ok = true;
    let mut got = Vec::new();
    for (cm, want) in rows {
        let p = compute(&cm).unwrap().percentages();
        ok &= p.iter().zip(want).all(|(a, b)| (a - b).abs() <= PERCENT_TOLERANCE);
        got.push(format!("{p:?}"));
    }
    outcome(ok, format!("A/R/P/F1 % = {}", got.join(" and ")))
}

fn difference_maps() -> Outcome {
    let mut r = common::rng(2024);
    let mut mismatches = 0;
    for _ in 0..1_000 {
        let rows = r.random_range(1..=16);
        let cols = r.random_range(2..=16);
        let x = Array2::from_shape_fn((rows, cols), |_| r.random_range(-50.0..50.0));
        let base = FeaturePlane::new(PlaneKind::Base(BaseFeature::Ms), x.clone());
        let v = velocity_map(&base).unwrap().data;
        let a = acceleration_map(&base).unwrap().data;
        if v != common::stencil(&x) || a != common::stencil(&common::stencil(&x)) {
            mismatches += 1;
        }
    }
    let hand = FeaturePlane::new(PlaneKind::Base(BaseFeature::Mfcc), array![[1.0, 3.0, 6.0, 10.0]]);
    let v = velocity_map(&hand).unwrap().data;
    let a = acceleration_map(&hand).unwrap().data;
    let hand_ok = v == array![[2.0, 2.5, 3.5, 4.0]] && a == array![[0.5, 0.75, 0.75, 0.5]];
    outcome(
        mismatches == 0 && hand_ok,
        format!("{mismatches}/1000 stencil mismatches; hand case V={v} A={a}"),
    )
}

fn feature_geometry() -> Outcome {
    let fx = FeatureExtractor::default();
    let mut r = common::rng(3);
    let clips = [
        AudioClip::silence(32_000, 16_000).unwrap(),
        AudioClip::new((0..32_000).map(|_| r.random_range(-1.0f32..1.0)).collect(), 16_000).unwrap(),
        AudioClip::new((0..32_000).map(|i| (i as f32 * 0.39).sin() * 0.5).collect(), 16_000).unwrap(),
    ];
    let mut ok = true;
    let mut slowest = Duration::ZERO;
    for clip in &clips {
        let start = Instant::now();
        ok &= fx.spectrogram_db_full(clip).unwrap().ncols() == 132;
        for s in FeatureSpec::ALL {
            let spec: FeatureSpec = s.parse().unwrap();
            let (c, h, w) = fx.assemble(clip, &spec).unwrap().shape();
            ok &= (1..=3).contains(&c) && c == spec.channels() && h == 128 && w == 128;
        }
        slowest = slowest.max(start.elapsed());
    }
    ok &= slowest < Duration::from_secs(1);
    outcome(
        ok,
        format!("{} specs x {} clips, 132 raw frames, slowest clip {:.3} s", FeatureSpec::ALL.len(), clips.len(), slowest.as_secs_f64()),
    )
}

fn network_conformance() -> Outcome {
    let start = Instant::now();
    let input = |c: usize| Tensor4::from_fn([1, c, 128, 128], |[_, ch, y, x]| ((ch * 7 + y * 3 + x) % 17) as f32 / 17.0 - 0.5);
    let trace = |kind, seed| {
        NetworkModel::seeded(kind, 3, seed).unwrap().forward(&input(3)).unwrap().trace
    };
    let v: Vec<_> = trace(NetworkKind::VNet, 1).into_iter().map(|t| t.shape).collect();
    let g: Vec<_> = trace(NetworkKind::GNet, 2).into_iter().map(|t| (t.name, t.shape)).collect();
    let r: Vec<_> = trace(NetworkKind::RNet, 3).into_iter().map(|t| (t.name, t.shape)).collect();
    let tables_ok = v == common::vnet_shapes() && g == common::gnet_table() && r == common::rnet_table();

    let gnet = build_network(NetworkKind::GNet, 3).unwrap();
    let modules = gnet.inception_modules();
    let inception_ok = modules.len() == 9
        && modules.iter().zip(common::GNET_INCEPTION_ROWS).all(|(m, row)| {
            let w = m.widths;
            m.out_channels() == row[0] && row[0] == row[1] + row[3] + row[5] + row[6] && w.c1x1 == row[1]
        });
    let zero_ok = [NetworkKind::VNet, NetworkKind::GNet, NetworkKind::RNet].iter().all(|&k| {
        build_network(k, 3).unwrap().forward(&input(3)).unwrap().probabilities[0] == [0.5, 0.5]
    });
    let elapsed = start.elapsed();
    outcome(
        tables_ok && inception_ok && zero_ok && elapsed < Duration::from_secs(10),
        format!(
            "rows V {} / G {} / R {} match; 9 inception sums {}; zero weights 0.5/0.5 {}; {:.2} s",
            v.len(),
            g.len(),
            r.len(),
            if inception_ok { "ok" } else { "WRONG" },
            if zero_ok { "ok" } else { "WRONG" },
            elapsed.as_secs_f64()
        ),
    )
}

fn convolution_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = common::rng(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = [1, 2, 3, 5, 7][r.random_range(0..5)];
        let stride = r.random_range(1..=3);
        let pad = r.random_range(0..=k / 2 + 1);
        let (h, w) = (r.random_range(k..=k + 14), r.random_range(k..=k + 14));
        let (n, c_in, c_out) = (r.random_range(1..=2), r.random_range(1..=8), r.random_range(1..=8));
        let input = Tensor4::from_fn([n, c_in, h, w], |_| r.random_range(-1.0f32..1.0));
        let kernel = Tensor4::from_fn([c_out, c_in, k, k], |_| r.random_range(-1.0f32..1.0));
        let bias: Vec<f32> = (0..c_out).map(|_| r.random_range(-1.0..1.0)).collect();
        let got = conv2d(&input, &kernel, &bias, stride, pad).unwrap();
        let (want, shape) = common::naive_conv(&input, &kernel, &bias, stride, pad);
        if got.shape() != shape {
            return outcome(false, format!("shape {:?} != {shape:?}", got.shape()));
        }
        let scale = want.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        for (&g, &x) in got.data().iter().zip(&want) {
            worst = worst.max((g as f64 - x).abs() / scale);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= CONV_RELATIVE_TOLERANCE && elapsed < Duration::from_secs(30),
        format!("200 cases, worst relative error {worst:.2e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn band_source(plane: &InspectionPlane, row: usize, col: usize, seed: u64, len: usize) -> Source {
    Source {
        position: plane.pixel_center(row, col),
        signal: AudioClip::new(common::band_limited_noise(seed, len, 1.0 / 16.0, 0.25), 16_000).unwrap(),
        gain: 1.0,
    }
}

fn beamforming_localization() -> Outcome {
    let start = Instant::now();
    let array = MicArray::spiral(64, 0.4).unwrap();
    let plane = InspectionPlane::new(1.0, 1.0, 1.0, 32, 32).unwrap();
    let delays = compute_delays(&plane, &array, SPEED_OF_SOUND).unwrap();
    let len = 4_000;
    let near = |p: &spectroflow::beamforming::Peak, (r, c): (usize, usize)| {
        p.row.abs_diff(r) <= LOCALIZATION_TOLERANCE_PX && p.col.abs_diff(c) <= LOCALIZATION_TOLERANCE_PX
    };

    let single = (20, 12);
    let block = simulate_scene(&Scene::new(vec![band_source(&plane, single.0, single.1, 1, len)]), &array, len, 16_000).unwrap();
    let map = beamform_power(&block, &plane, &delays, None, Interpolation::Linear, 200, len - 200).unwrap();
    let peak = locate_peaks(&map, 1, 4.0).unwrap()[0];
    let single_ok = near(&peak, single);

    let pair = [(16, 10), (16, 20)];
    let scene = Scene::new(vec![band_source(&plane, 16, 10, 2, len), band_source(&plane, 16, 20, 3, len)]);
    let block = simulate_scene(&scene, &array, len, 16_000).unwrap();
    let map = beamform_power(&block, &plane, &delays, None, Interpolation::Linear, 200, len - 200).unwrap();
    let peaks = locate_peaks(&map, 2, 4.0).unwrap();
    let pair_ok = pair.iter().all(|&t| peaks.iter().any(|p| near(p, t)));

    // Coherent gain with analytically delayed copies of a 1 kHz tone.
    let target = plane.pixel_center(9, 25);
    let channels = array
        .positions()
        .iter()
        .map(|&m| {
            let tau = steering_delay(target, m, SPEED_OF_SOUND);
            (0..3_200).map(|i| (2.0 * std::f64::consts::PI * 1_000.0 * (i as f64 / 16_000.0 + tau)).sin() as f32).collect()
        })
        .collect();
    let block = ChannelBlock::new(channels, 16_000).unwrap();
    let matched = Array2::from_shape_fn((1, array.len()), |(_, n)| steering_delay(target, array.positions()[n], SPEED_OF_SOUND));
    let b = das_beamform(&block, &matched, None, Interpolation::Linear).unwrap();
    let peak_b = (200..3_000).map(|t| b[[0, t]].abs()).fold(0.0, f64::max);
    let single_peak = (200..3_000).map(|t| block.channels()[0][t].abs() as f64).fold(0.0, f64::max);
    let gain = peak_b / single_peak / array.len() as f64;
    let gain_ok = (gain - 1.0).abs() <= COHERENT_GAIN_TOLERANCE;

    let elapsed = start.elapsed();
    outcome(
        single_ok && pair_ok && gain_ok && elapsed < Duration::from_secs(60),
        format!(
            "single at {:?} -> {:?}; pair {:?} -> {:?}; coherent gain {:.4} N; {:.2} s",
            single,
            (peak.row, peak.col),
            pair,
            peaks.iter().map(|p| (p.row, p.col)).collect::<Vec<_>>(),
            gain,
            elapsed.as_secs_f64()
        ),
    )
}

fn delay_closed_form() -> Outcome {
    let tau = steering_delay([0.0, 0.0, 1.0], [0.1, 0.0, 0.0], 343.0);
    let exact = (1.0 - 1.01f64.sqrt()) / 343.0;
    let closed_form_ok = (tau - exact).abs() <= 1e-15;
    let literal_ok = (tau - STATED_DELAY_S).abs() <= DELAY_TOLERANCE_S;
    let implied_c = (1.0 - 1.01f64.sqrt()) / STATED_DELAY_S;
    outcome(
        closed_form_ok && literal_ok,
        format!(
            "tau = {tau:.6e} s equals (1 - sqrt(1.01))/343 = {exact:.6e} s exactly; stated {STATED_DELAY_S:.4e} s is {:.1e} s away, \
             which would need c = {implied_c:.3} m/s",
            (tau - STATED_DELAY_S).abs()
        ),
    )
}

fn pipeline_cadence() -> Outcome {
    let mut r = common::rng(8);
    let signal: Vec<f32> = (0..160_000).map(|_| r.random_range(-0.3f32..0.3)).collect();
    let expected: Vec<u64> = (0..17).map(|k| 32_000 + 8_000 * k).collect();
    let mut cadence_ok = true;
    for chunk in [1, 160, 32_000] {
        let mut buf = StreamBuffer::new(32_000, 8_000, 1).unwrap();
        let ends: Vec<u64> = signal
            .chunks(chunk)
            .flat_map(|c| buf.push(c).unwrap())
            .map(|w| w.start + 32_000)
            .collect();
        cadence_ok &= ends == expected;
    }
    let config = StreamConfig::default();
    let clf = CnnClassifier::new(
        NetworkModel::seeded(NetworkKind::GNet, 3, 4).unwrap(),
        config.feature_spec.parse().unwrap(),
        None,
    )
    .unwrap();
    let feed = Feed::Mono(AudioClip::new(signal, 16_000).unwrap());
    let events = run_stream_chunked(&feed, 160, &clf, &config, None).unwrap();
    let times_ok = events.len() == 17 && events.iter().enumerate().all(|(k, e)| e.t_end == 2.0 + 0.5 * k as f64);
    let worst = events.iter().map(|e| e.latency_s).fold(0.0, f64::max);
    let mean = events.iter().map(|e| e.latency_s).sum::<f64>() / events.len().max(1) as f64;
    outcome(
        cadence_ok && times_ok && worst < WINDOW_DEADLINE_S,
        format!(
            "17 windows at 2.0+0.5k s for chunks 1/160/32000; G-net MFCC-V-A window latency mean {mean:.3} s, max {worst:.3} s"
        ),
    )
}

fn augmentation_protocol() -> Outcome {
    let mut r = common::rng(9);
    let mut clip = |len: usize| AudioClip::new((0..len).map(|_| r.random_range(-1.0f32..1.0)).collect(), 16_000).unwrap();
    let event = clip(32_000);
    let noise = clip(32_000);
    let identity = mix(&event, &noise, 0.0, 1.0).unwrap() == event;

    let events: Vec<_> = (0..10).map(|i| LabeledClip::original(clip(3_200), Label::Cough, format!("c{i}"))).collect();
    let noises: Vec<_> = (0..5).map(|_| clip(8_000)).collect();
    let policy = AugmentPolicy {
        seed: 45,
        ..Default::default()
    };
    let render = || {
        let out = augment_dataset(&events, &noises, &policy).unwrap();
        let mut bytes = Vec::new();
        for (i, c) in out.iter().enumerate() {
            write_wav_to(&c.clip, &mut bytes).unwrap();
            bytes.extend(serde_json::to_vec(&ManifestRecord::new(c, format!("{i:06}.wav"))).unwrap());
            bytes.push(b'\n');
        }
        (out.len(), bytes)
    };
    let (count, first) = render();
    let (_, second) = render();
    outcome(
        identity && count == 450 && first == second,
        format!(
            "identity mix {identity}; {count} manifest records from 10 x 45; reruns byte-identical {} ({} bytes)",
            first == second,
            first.len()
        ),
    )
}

fn normalization() -> Outcome {
    let fx = FeatureExtractor::default();
    let mut r = common::rng(10);
    let mut worst_mean = 0.0f64;
    let mut worst_std = 0.0f64;
    for spec in ["MFCC-V-A", "SP-MS-MFCC", "MS-V"] {
        let spec: FeatureSpec = spec.parse().unwrap();
        let batch: Vec<_> = (0..4)
            .map(|k| {
                let scale = 0.1 + 0.3 * k as f32;
                let clip = AudioClip::new((0..32_000).map(|_| scale * r.random_range(-1.0f32..1.0)).collect(), 16_000).unwrap();
                fx.assemble(&clip, &spec).unwrap()
            })
            .collect();
        let stats = compute_channel_stats(&batch).unwrap();
        let after = compute_channel_stats(&normalize(&batch, &stats).unwrap()).unwrap();
        for c in 0..spec.channels() {
            worst_mean = worst_mean.max(after.mean[c].abs());
            worst_std = worst_std.max((after.std[c] - 1.0).abs());
        }
    }
    let features = (worst_mean, worst_std);

    // Group normalization: per (sample, group) statistics after gamma=1, beta=0.
    let (mut gn_mean, mut gn_std) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let groups = [1, 2, 4, 8][r.random_range(0..4)];
        let c = groups * r.random_range(1..=4);
        let (n, h, w) = (r.random_range(1..=3), r.random_range(4..=16), r.random_range(4..=16));
        let offset = r.random_range(-20.0f32..20.0);
        let spread = r.random_range(0.5f32..10.0);
        let input = Tensor4::from_fn([n, c, h, w], |_| offset + spread * r.random_range(-1.0f32..1.0));
        let out = group_norm(&input, groups, &vec![1.0; c], &vec![0.0; c], 1e-5).unwrap();
        let per_group = c / groups * h * w;
        for s in 0..n {
            for chunk in out.sample(s).chunks(per_group) {
                let m = chunk.iter().map(|&v| v as f64).sum::<f64>() / per_group as f64;
                let v = chunk.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / per_group as f64;
                gn_mean = gn_mean.max(m.abs());
                gn_std = gn_std.max((v.sqrt() - 1.0).abs());
            }
        }
    }
    outcome(
        features.0 <= NORMALIZED_MEAN_TOLERANCE
            && features.1 <= NORMALIZED_STD_TOLERANCE
            && gn_mean <= NORMALIZED_MEAN_TOLERANCE
            && gn_std <= NORMALIZED_STD_TOLERANCE,
        format!(
            "features: worst |mean| {:.2e}, worst |std - 1| {:.2e}; group norm: worst |mean| {gn_mean:.2e}, worst |std - 1| {gn_std:.2e}",
            features.0, features.1
        ),
    )
}

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("metrics reproduction", metrics_reproduction),
        ("velocity/acceleration oracle", difference_maps),
        ("feature geometry", feature_geometry),
        ("network conformance", network_conformance),
        ("convolution oracle", convolution_oracle),
        ("beamforming localization", beamforming_localization),
        ("steering delay closed form", delay_closed_form),
        ("pipeline cadence", pipeline_cadence),
        ("augmentation protocol", augmentation_protocol),
        ("normalization", normalization),
    ];
    let mut failed = Vec::new();
    let mut unexpected = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        let start = Instant::now();
        let o = run();
        let known = KNOWN_UNATTAINABLE.contains(&id);
        if !o.passed {
            failed.push(id);
        }
        if o.passed == known {
            unexpected.push(id);
        }
        println!(
            "criterion {:>2} {:<30} {}{} ({:.2} s) {}",
            id,
            name,
            if o.passed { "PASS" } else { "FAIL" },
            match (known, o.passed) {
                (true, false) => " [known]",
                (true, true) => " [unexpected pass]",
                _ => "",
            },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!(
        "acceptance: {}/{} criteria passed; failed {:?}; known unattainable {:?}",
        criteria.len() - failed.len(),
        criteria.len(),
        failed,
        KNOWN_UNATTAINABLE
    );
    if !unexpected.is_empty() {
        println!("acceptance: unexpected outcome for {unexpected:?}");
        std::process::exit(1);
    }
}
