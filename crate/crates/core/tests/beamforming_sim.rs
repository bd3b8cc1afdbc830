mod common;

use spectroflow::audio_io::AudioClip;
use spectroflow::beamforming::{
    beamform_power, compute_delays, das_beamform, locate_peaks, simulate_scene, steering_delay, ChannelBlock,
    InspectionPlane, Interpolation, MicArray, Scene, Source, SPEED_OF_SOUND,
};

const FS: u32 = 16_000;

fn spiral64() -> MicArray {
    MicArray::spiral(64, 0.4).unwrap()
}

fn grid() -> InspectionPlane {
    InspectionPlane::new(1.0, 1.0, 1.0, 32, 32).unwrap()
}

/// Channels built analytically as `f(t/fs + tau_n)`: each mic is the
/// reference advanced by its steering delay toward `target`.
fn steered_copies(array: &MicArray, target: [f64; 3], len: usize, f: impl Fn(f64) -> f64) -> ChannelBlock {
    let channels = array
        .positions()
        .iter()
        .map(|&m| {
            let tau = steering_delay(target, m, SPEED_OF_SOUND);
            (0..len).map(|i| f(i as f64 / FS as f64 + tau) as f32).collect()
        })
        .collect();
    ChannelBlock::new(channels, FS).unwrap()
}

fn source(plane: &InspectionPlane, row: usize, col: usize, seed: u64, len: usize) -> Source {
    Source {
        position: plane.pixel_center(row, col),
        signal: AudioClip::new(common::band_limited_noise(seed, len, 1_000.0 / 16_000.0, 4_000.0 / 16_000.0), FS).unwrap(),
        gain: 1.0,
    }
}

#[test]
fn synthesized_copies_sum_to_n_times_the_reference() {
    let array = spiral64();
    let target = grid().pixel_center(20, 12);
    let reference = |t: f64| {
        (2.0 * std::f64::consts::PI * 150.0 * t).sin() + 0.5 * (2.0 * std::f64::consts::PI * 230.0 * t + 1.0).sin()
    };
    let block = steered_copies(&array, target, 4_000, reference);
    let delays = ndarray::Array2::from_shape_fn((1, array.len()), |(_, n)| {
        steering_delay(target, array.positions()[n], SPEED_OF_SOUND)
    });
    let b = das_beamform(&block, &delays, None, Interpolation::Linear).unwrap();
    let n = array.len() as f64;
    let mut worst = 0.0f64;
    for t in 100..3_900 {
        let want = n * reference(t as f64 / FS as f64) as f32 as f64;
        worst = worst.max((b[[0, t]] - want).abs() / n);
    }
    assert!(worst <= 1e-3 * 1.5, "max deviation {worst} of a 1.5 peak");
}

#[test]
fn coherent_gain_at_the_matched_pixel() {
    let array = spiral64();
    let plane = grid();
    let target = plane.pixel_center(9, 25);
    let tone = |t: f64| (2.0 * std::f64::consts::PI * 1_000.0 * t).sin();
    let block = steered_copies(&array, target, 3_200, tone);
    let delays = compute_delays(&plane, &array, SPEED_OF_SOUND).unwrap();
    let b = das_beamform(&block, &delays, None, Interpolation::Linear).unwrap();
    let pixel = 9 * 32 + 25;
    let peak = (200..3_000).map(|t| b[[pixel, t]].abs()).fold(0.0, f64::max);
    let single = (200..3_000).map(|t| block.channels()[0][t].abs() as f64).fold(0.0, f64::max);
    let ratio = peak / single / array.len() as f64;
    assert!((ratio - 1.0).abs() <= 0.05, "gain ratio {ratio}");
}

#[test]
fn single_source_is_located_within_one_pixel() {
    let array = spiral64();
    let plane = grid();
    for (k, &(row, col)) in [(20usize, 12usize), (5, 27), (16, 16)].iter().enumerate() {
        let scene = Scene::new(vec![source(&plane, row, col, 10 + k as u64, 4_000)]);
        let block = simulate_scene(&scene, &array, 4_000, FS).unwrap();
        let delays = compute_delays(&plane, &array, scene.c).unwrap();
        let map = beamform_power(&block, &plane, &delays, None, Interpolation::Linear, 200, 3_800).unwrap();
        let peak = locate_peaks(&map, 1, 4.0).unwrap()[0];
        assert!(peak.row.abs_diff(row) <= 1 && peak.col.abs_diff(col) <= 1, "{:?} vs {:?}", (peak.row, peak.col), (row, col));
    }
}

#[test]
fn two_sources_ten_pixels_apart_are_both_found() {
    let array = spiral64();
    let plane = grid();
    let truth = [(16usize, 10usize), (16, 20)];
    let scene = Scene::new(vec![source(&plane, 16, 10, 1, 4_000), source(&plane, 16, 20, 2, 4_000)]);
    let block = simulate_scene(&scene, &array, 4_000, FS).unwrap();
    let delays = compute_delays(&plane, &array, scene.c).unwrap();
    let map = beamform_power(&block, &plane, &delays, None, Interpolation::Linear, 200, 3_800).unwrap();
    let peaks = locate_peaks(&map, 2, 4.0).unwrap();
    assert_eq!(peaks.len(), 2);
    for (r, c) in truth {
        assert!(
            peaks.iter().any(|p| p.row.abs_diff(r) <= 1 && p.col.abs_diff(c) <= 1),
            "source at {:?} missing from {:?}",
            (r, c),
            peaks.iter().map(|p| (p.row, p.col)).collect::<Vec<_>>()
        );
    }
}

#[test]
fn power_map_is_shift_invariant() {
    let array = MicArray::spiral(16, 0.3).unwrap();
    let plane = InspectionPlane::new(1.0, 1.0, 1.0, 8, 8).unwrap();
    let scene = Scene::new(vec![source(&plane, 2, 5, 3, 2_000)]);
    let block = simulate_scene(&scene, &array, 2_000, FS).unwrap();
    let shift = 137;
    let shifted = ChannelBlock::new(
        block.channels().iter().map(|c| [vec![0.0; shift], c.clone()].concat()).collect(),
        FS,
    )
    .unwrap();
    let delays = compute_delays(&plane, &array, scene.c).unwrap();
    let a = beamform_power(&block, &plane, &delays, None, Interpolation::Linear, 300, 1_700).unwrap();
    let b = beamform_power(&shifted, &plane, &delays, None, Interpolation::Linear, 300 + shift, 1_700 + shift).unwrap();
    assert_eq!(a.values, b.values);
}

#[test]
fn matched_pixel_dominates_distant_pixels() {
    let array = MicArray::spiral(64, 0.4).unwrap();
    let plane = InspectionPlane::new(1.0, 2.0, 2.0, 32, 32).unwrap();
    let freq = 3_000.0;
    let target = plane.pixel_center(16, 16);
    let block = steered_copies(&array, target, 2_000, |t| (2.0 * std::f64::consts::PI * freq * t).sin());
    let delays = compute_delays(&plane, &array, SPEED_OF_SOUND).unwrap();
    let map = beamform_power(&block, &plane, &delays, None, Interpolation::Linear, 200, 1_800).unwrap();
    let beamwidth = SPEED_OF_SOUND / freq * plane.distance / array.aperture();
    let matched = map.values[[16, 16]];
    let mut checked = 0;
    for r in 0..32 {
        for c in 0..32 {
            let p = plane.pixel_center(r, c);
            let d = ((p[0] - target[0]).powi(2) + (p[1] - target[1]).powi(2)).sqrt();
            if d >= 5.0 * beamwidth {
                assert!(map.values[[r, c]] <= matched);
                checked += 1;
            }
        }
    }
    assert!(checked > 50);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let array = MicArray::spiral(24, 0.3).unwrap();
    let plane = InspectionPlane::new(1.0, 1.0, 1.0, 10, 10).unwrap();
    let mut scene = Scene::new(vec![source(&plane, 3, 7, 4, 1_500)]);
    scene.noise_floor = 0.01;
    scene.seed = 99;
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let block = simulate_scene(&scene, &array, 1_500, FS).unwrap();
            let delays = compute_delays(&plane, &array, scene.c).unwrap();
            let map = beamform_power(&block, &plane, &delays, None, Interpolation::Sinc { half_width: 6 }, 0, 1_500).unwrap();
            (block, map.values)
        })
    };
    assert_eq!(run(1), run(3));
}
