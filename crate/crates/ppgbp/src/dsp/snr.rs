//! Spectral signal-to-noise estimate for PPG windows.
//!
//! The pulse fundamental is located as the periodogram maximum in the
//! 0.7-2.5 Hz cardiac band. Signal power is the fundamental plus its first
//! harmonic (each +/- 0.2 Hz); noise power is everything else in 0.1-10 Hz.
//! The periodogram is Hann-tapered with the mean removed first, so band
//! power ratios stay stable for fundamentals that fall between bins.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::dsp::Window;
use crate::error::{Error, Result};

/// Frequency band that may contain the pulse fundamental, Hz.
pub const FUNDAMENTAL_BAND: (f64, f64) = (0.7, 2.5);
/// Half-width of the signal bands around f0 and 2*f0, Hz.
pub const SIGNAL_HALF_WIDTH: f64 = 0.2;
/// Band over which noise power is accumulated, Hz.
pub const NOISE_BAND: (f64, f64) = (0.1, 10.0);

thread_local! {
    static FFT_CACHE: RefCell<HashMap<usize, Arc<dyn rustfft::Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

/// One-sided periodogram (unnormalized power per bin, bins 0..=n/2).
pub fn periodogram(samples: &[f64]) -> Vec<f64> {
    let n = samples.len();
    let fft = FFT_CACHE.with(|cache| {
        cache
            .borrow_mut()
            .entry(n)
            .or_insert_with(|| FftPlanner::new().plan_fft_forward(n))
            .clone()
    });
    let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.process(&mut buf);
    buf[..=n / 2].iter().map(|c| c.norm_sqr()).collect()
}

/// SNR in dB. Constant or all-zero windows yield `-inf` (flagged `low_snr`
/// downstream); a window with no measurable off-band power yields `+inf`.
pub fn compute_snr(window: &Window) -> Result<f64> {
    let x = &window.samples;
    if x.len() < 128 {
        return Err(Error::Rejection(format!(
            "window too short for SNR estimation: {} samples, need >= 128",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Rejection("non-finite samples in window".into()));
    }

    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var.sqrt() < 1e-12 * (1.0 + mean.abs()) {
        return Ok(f64::NEG_INFINITY);
    }

    // Demean and Hann-taper so neither the offset nor rectangular leakage
    // spills into the noise band.
    let tapered: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n).cos());
            (v - mean) * w
        })
        .collect();
    let power = periodogram(&tapered);
    let df = window.fs / n;
    let freq = |k: usize| k as f64 * df;

    let f0 = power
        .iter()
        .enumerate()
        .filter(|(k, _)| freq(*k) >= FUNDAMENTAL_BAND.0 && freq(*k) <= FUNDAMENTAL_BAND.1)
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(k, _)| freq(k));
    let f0 = match f0 {
        Some(f) => f,
        None => return Ok(f64::NEG_INFINITY),
    };

    // Inclusive band edges with an epsilon: bin frequencies land exactly on
    // the +/- 0.2 Hz boundary for the default window length.
    let in_signal_band = |f: f64| {
        (f - f0).abs() <= SIGNAL_HALF_WIDTH + 1e-9 || (f - 2.0 * f0).abs() <= SIGNAL_HALF_WIDTH + 1e-9
    };
    let mut p_sig = 0.0;
    let mut p_noise = 0.0;
    for (k, &p) in power.iter().enumerate() {
        let f = freq(k);
        if in_signal_band(f) {
            p_sig += p;
        } else if f >= NOISE_BAND.0 && f <= NOISE_BAND.1 {
            p_noise += p;
        }
    }

    if p_sig <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if p_noise <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (p_sig / p_noise).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone_window(f: f64, fs: f64, n: usize) -> Window {
        Window {
            samples: (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect(),
            fs,
            source_offset: 0,
        }
    }

    #[test]
    fn clean_tone_has_high_snr() {
        let w = tone_window(1.2, 125.0, 625);
        let snr = compute_snr(&w).unwrap();
        assert!(snr > 10.0, "snr {snr}");
    }

    #[test]
    fn constant_window_is_sentinel() {
        let w = Window {
            samples: vec![3.0; 625],
            fs: 125.0,
            source_offset: 0,
        };
        assert_eq!(compute_snr(&w).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn all_zero_window_is_sentinel() {
        let w = Window {
            samples: vec![0.0; 625],
            fs: 125.0,
            source_offset: 0,
        };
        assert_eq!(compute_snr(&w).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn short_window_is_rejected() {
        let w = tone_window(1.2, 125.0, 100);
        assert!(compute_snr(&w).is_err());
    }

    #[test]
    fn non_finite_window_is_rejected() {
        let mut w = tone_window(1.2, 125.0, 625);
        w.samples[10] = f64::NAN;
        assert!(compute_snr(&w).is_err());
    }
}
