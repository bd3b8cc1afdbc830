use ndarray::Array2;

/// HTK mel scale: `2595 * log10(1 + f / 700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with unit peak, centres equally spaced on the HTK mel
/// scale between `f_min` and `f_max`. Shaped `(n_mels, n_fft/2 + 1)`.
///
/// At 512-point resolution the narrow low-frequency triangles can fall between
/// FFT bins and come out all-zero; their bands then sit at the dB floor.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize, f_min: f64, f_max: f64) -> Array2<f64> {
    let bins = n_fft / 2 + 1;
    let mel_lo = hz_to_mel(f_min);
    let mel_hi = hz_to_mel(f_max);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut bank = Array2::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = if f > lo && f <= centre {
                (f - lo) / (centre - lo)
            } else if f > centre && f < hi {
                (hi - f) / (hi - centre)
            } else {
                0.0
            };
            bank[[m, k]] = w;
        }
    }
    bank
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_closed_forms() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        let expected = 2595.0 * 2f64.log10();
        assert!((hz_to_mel(700.0) - expected).abs() < 1e-12);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        for hz in [10.0, 440.0, 4000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn filters_are_triangles_within_unit_height() {
        let bank = mel_filterbank(16_000, 512, 128, 0.0, 8000.0);
        assert_eq!(bank.dim(), (128, 257));
        assert!(bank.iter().all(|&w| (0.0..=1.0).contains(&w)));
        // the top band reaches close to Nyquist, and the high bands are populated
        for m in 64..128 {
            assert!(bank.row(m).sum() > 0.0, "band {m} is empty");
        }
    }
}
