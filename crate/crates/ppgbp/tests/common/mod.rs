//! Shared oracles for integration tests. These deliberately avoid the
//! library's own evaluation paths: the frequency response is measured from a
//! realized impulse response via an explicit DFT sum.

#![allow(dead_code)]

use ppgbp::dsp::{sosfilt, IirCoefficients};

/// Single-pass magnitude response at `f` Hz, measured by filtering a unit
/// impulse and summing the DFT of the impulse response directly.
pub fn magnitude_at(coeffs: &IirCoefficients, f: f64, fs: f64, n: usize) -> f64 {
    let mut impulse = vec![0.0; n];
    impulse[0] = 1.0;
    let h = sosfilt(&coeffs.sections, &impulse, None);
    let omega = 2.0 * std::f64::consts::PI * f / fs;
    let mut re = 0.0;
    let mut im = 0.0;
    for (t, &v) in h.iter().enumerate() {
        let phase = omega * t as f64;
        re += v * phase.cos();
        im -= v * phase.sin();
    }
    (re * re + im * im).sqrt()
}

pub fn magnitude_db_at(coeffs: &IirCoefficients, f: f64, fs: f64, n: usize) -> f64 {
    20.0 * magnitude_at(coeffs, f, fs, n).log10()
}

/// Direct O(n^2) one-sided periodogram, independent of the FFT-based path.
pub fn direct_periodogram(samples: &[f64]) -> Vec<f64> {
    let n = samples.len();
    (0..=n / 2)
        .map(|k| {
            let omega = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, &v) in samples.iter().enumerate() {
                let phase = omega * t as f64;
                re += v * phase.cos();
                im -= v * phase.sin();
            }
            re * re + im * im
        })
        .collect()
}
