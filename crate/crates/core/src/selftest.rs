//! Hand-worked example checks run by `sfc selftest`.

use ndarray::array;

use crate::audio_io::{segment, AudioClip, SegmentationPolicy};
use crate::augmentation::mix;
use crate::beamforming::steering_delay;
use crate::cnn::{build_network, NetworkKind, Tensor4};
use crate::detector::StreamBuffer;
use crate::features::{assemble, time_difference};
use crate::metrics::{compute, ConfusionMatrix};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

pub fn run() -> Vec<Check> {
    vec![
        check("metrics: pilot rows", || {
            let a = compute(&ConfusionMatrix::new(36, 4, 4, 156))?.percentages();
            let b = compute(&ConfusionMatrix::new(36, 28, 4, 132))?.percentages();
            let ok = close(&a, &[96.0, 90.0, 90.0, 90.0], 1e-9) && close(&b, &[84.0, 90.0, 56.3, 69.2], 1e-9);
            Ok((ok, format!("{a:?} {b:?}")))
        }),
        check("features: velocity/acceleration stencil", || {
            let x = array![[1.0, 3.0, 6.0, 10.0]];
            let v = time_difference(&x)?;
            let a = time_difference(&v)?;
            let ok = close(v.as_slice().unwrap(), &[2.0, 2.5, 3.5, 4.0], 0.0)
                && close(a.as_slice().unwrap(), &[0.5, 0.75, 0.75, 0.5], 0.0);
            Ok((ok, format!("V={v} A={a}")))
        }),
        check("features: MFCC-V-A geometry", || {
            let clip = AudioClip::new((0..32_000).map(|i| (i as f32 * 0.05).sin() * 0.3).collect(), 16_000)?;
            let shape = assemble(&clip, "MFCC-V-A")?.shape();
            Ok((shape == (3, 128, 128), format!("{shape:?}")))
        }),
        check("audio: segmentation counts", || {
            let clip = AudioClip::silence(16_000 * 5, 16_000)?;
            let plain = segment(&clip, &SegmentationPolicy::new(2.0, 0.0)?)?.len();
            let half = segment(&clip, &SegmentationPolicy::new(2.0, 0.5)?)?.len();
            Ok((plain == 2 && half == 4, format!("{plain} / {half}")))
        }),
        check("augmentation: identity mix", || {
            let e = AudioClip::new((0..100).map(|i| (i as f32).cos()).collect(), 16_000)?;
            let n = AudioClip::new(vec![0.7; 100], 16_000)?;
            let out = mix(&e, &n, 0.0, 1.0)?;
            Ok((out == e, String::new()))
        }),
        check("beamforming: steering delay", || {
            let tau = steering_delay([0.0, 0.0, 1.0], [0.1, 0.0, 0.0], 343.0);
            Ok(((tau - (1.0 - 1.01f64.sqrt()) / 343.0).abs() < 1e-15 && (tau + 1.4541e-5).abs() < 1e-9, format!("{tau:e} s")))
        }),
        check("cnn: zero weights give 0.5/0.5", || {
            let model = build_network(NetworkKind::VNet, 1)?;
            let p = model.forward(&Tensor4::zeros([1, 1, 128, 128]))?.probabilities[0];
            Ok((p == [0.5, 0.5], format!("{p:?}")))
        }),
        check("detector: 17 windows from 10 s", || {
            let mut buf = StreamBuffer::new(32_000, 8_000, 1)?;
            let n = buf.push(&vec![0.0; 160_000])?.len();
            Ok((n == 17, n.to_string()))
        }),
    ]
}
