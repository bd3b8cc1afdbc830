mod common;

use rand::Rng;
use spectroflow::audio_io::AudioClip;
use spectroflow::beamforming::{simulate_scene, InspectionPlane, MicArray, Scene, Source};
use spectroflow::cnn::{build_network, NetworkKind, NetworkModel};
use spectroflow::detector::{
    classify_window, run_stream, run_stream_chunked, run_stream_concurrent, AlwaysCough, CnnClassifier, Feed,
    Localizer, StreamConfig,
};
use spectroflow::Label;

fn noise_clip(seed: u64, len: usize) -> AudioClip {
    let mut r = common::rng(seed);
    AudioClip::new((0..len).map(|_| r.random_range(-0.3f32..0.3)).collect(), 16_000).unwrap()
}

#[test]
fn gnet_window_fits_the_hop_deadline() {
    let config = StreamConfig::default();
    let model = NetworkModel::seeded(NetworkKind::GNet, 3, 1).unwrap();
    let clf = CnnClassifier::new(model, config.feature_spec.parse().unwrap(), None).unwrap();
    let window = noise_clip(2, 32_000);
    classify_window(&window, &clf, &config).unwrap();
    let mut latencies: Vec<f64> = (0..3).map(|_| classify_window(&window, &clf, &config).unwrap().latency_s).collect();
    latencies.sort_by(f64::total_cmp);
    eprintln!("G-net window latency (median of 3): {:.3} s", latencies[1]);
    assert!(latencies[1] < config.hop_seconds);
}

#[test]
fn silent_stream_through_zero_weights_is_all_others() {
    let config = StreamConfig::default();
    let clf = CnnClassifier::new(build_network(NetworkKind::VNet, 3).unwrap(), "MFCC-V-A".parse().unwrap(), None).unwrap();
    let events = run_stream(&Feed::Mono(AudioClip::silence(160_000, 16_000).unwrap()), &clf, &config, None).unwrap();
    assert_eq!(events.len(), 17);
    assert!(events.iter().all(|e| e.label == Label::Others && e.confidence == 0.5));
}

#[test]
fn events_do_not_depend_on_chunk_size() {
    let config = StreamConfig::default();
    let clf = CnnClassifier::new(NetworkModel::seeded(NetworkKind::VNet, 3, 9).unwrap(), "MFCC-V-A".parse().unwrap(), None).unwrap();
    let feed = Feed::Mono(noise_clip(3, 160_000));
    let reference = run_stream_chunked(&feed, 32_000, &clf, &config, None).unwrap();
    assert_eq!(reference.len(), 17);
    for chunk in [1, 160] {
        let events = run_stream_chunked(&feed, chunk, &clf, &config, None).unwrap();
        assert!(events.iter().zip(&reference).all(|(a, b)| a.same_outcome(b)));
        assert_eq!(events.len(), reference.len());
    }
    let concurrent = run_stream_concurrent(&feed, 160, &clf, &config, None).unwrap();
    assert!(concurrent.iter().zip(&reference).all(|(a, b)| a.same_outcome(b)));
}

#[test]
fn cough_events_carry_the_source_location() {
    let array = MicArray::spiral(32, 0.4).unwrap();
    let plane = InspectionPlane::new(1.0, 1.0, 1.0, 12, 12).unwrap();
    let truth = (3, 8);
    let len = 48_000;
    let scene = Scene::new(vec![Source {
        position: plane.pixel_center(truth.0, truth.1),
        signal: AudioClip::new(common::band_limited_noise(5, len, 1.0 / 16.0, 0.25), 16_000).unwrap(),
        gain: 1.0,
    }]);
    let block = simulate_scene(&scene, &array, len, 16_000).unwrap();
    let config = StreamConfig {
        localize: true,
        ..Default::default()
    };
    let localizer = Localizer::new(&array, plane, scene.c).unwrap();
    let events = run_stream(&Feed::Multi(block), &AlwaysCough, &config, Some(&localizer)).unwrap();
    assert_eq!(events.len(), 3);
    for e in &events {
        let loc = e.location.expect("cough events are localized");
        let (row, col) = plane.pixel_of([loc.x, loc.y, loc.z]).unwrap();
        assert!(row.abs_diff(truth.0) <= 1 && col.abs_diff(truth.1) <= 1, "{:?}", (row, col));
        assert!(loc.power > 0.0);
    }
}
