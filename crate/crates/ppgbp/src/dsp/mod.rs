//! Deterministic signal-processing primitives: bandpass filtering, windowing,
//! SNR estimation, systolic peak detection, SBP/HR derivation, normalization
//! and quality gating.
//!
//! All operations are pure functions of their inputs and safe to run
//! concurrently on disjoint windows or records.

mod filter;
mod peaks;
mod snr;

pub use filter::{apply_filter, design_bandpass, sosfilt, Biquad, FilterSpec, IirCoefficients};
pub use peaks::{detect_peaks, MIN_PEAK_DISTANCE_S, MIN_RELATIVE_PROMINENCE};
pub use snr::{compute_snr, periodogram, FUNDAMENTAL_BAND, NOISE_BAND, SIGNAL_HALF_WIDTH};

use crate::error::{Error, Result};

/// One fixed-length signal window cut from a parent record.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub samples: Vec<f64>,
    pub fs: f64,
    /// Sample index of this window's first sample in the parent record.
    pub source_offset: usize,
}

/// Why a window was accepted or rejected by the quality gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    Ok,
    LowSnr,
    SbpOutOfRange,
    HrOutOfRange,
    NoPeaks,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::Ok => "ok",
            RejectReason::LowSnr => "low_snr",
            RejectReason::SbpOutOfRange => "sbp_out_of_range",
            RejectReason::HrOutOfRange => "hr_out_of_range",
            RejectReason::NoPeaks => "no_peaks",
        }
    }
}

/// Gate outcome; `accepted` holds exactly when `reason == Ok`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QualityVerdict {
    pub accepted: bool,
    pub reason: RejectReason,
}

impl QualityVerdict {
    pub fn ok() -> Self {
        QualityVerdict {
            accepted: true,
            reason: RejectReason::Ok,
        }
    }

    pub fn rejected(reason: RejectReason) -> Self {
        debug_assert!(reason != RejectReason::Ok);
        QualityVerdict {
            accepted: false,
            reason,
        }
    }
}

/// Acceptance thresholds for preprocessed windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateThresholds {
    pub snr_min_db: f64,
    pub sbp_min: f64,
    pub sbp_max: f64,
    pub hr_min: f64,
    pub hr_max: f64,
}

impl Default for GateThresholds {
    fn default() -> Self {
        GateThresholds {
            snr_min_db: -7.0,
            sbp_min: 80.0,
            sbp_max: 180.0,
            hr_min: 50.0,
            hr_max: 140.0,
        }
    }
}

/// Cuts a signal into fixed-length windows with the given overlap.
///
/// Window length is `round(fs * window_s)`, hop is
/// `floor(fs * (window_s - overlap_s))`, and any trailing remainder shorter
/// than a full window is discarded. A signal shorter than one window yields
/// an empty list.
pub fn segment_windows(
    signal: &[f64],
    fs: f64,
    window_s: f64,
    overlap_s: f64,
) -> Result<Vec<Window>> {
    if !(fs > 0.0) {
        return Err(Error::Config(format!("fs must be > 0, got {fs}")));
    }
    if !(overlap_s >= 0.0 && window_s > overlap_s) {
        return Err(Error::Config(format!(
            "need window_s > overlap_s >= 0, got {window_s} / {overlap_s}"
        )));
    }
    let n = (fs * window_s).round() as usize;
    if n == 0 {
        return Err(Error::Config("window length rounds to zero samples".into()));
    }
    let hop = (fs * (window_s - overlap_s)).floor() as usize;
    if hop == 0 {
        return Err(Error::Config("hop rounds to zero samples".into()));
    }
    if signal.len() < n {
        return Ok(Vec::new());
    }
    let count = (signal.len() - n) / hop + 1;
    let mut windows = Vec::with_capacity(count);
    for k in 0..count {
        let off = k * hop;
        windows.push(Window {
            samples: signal[off..off + n].to_vec(),
            fs,
            source_offset: off,
        });
    }
    Ok(windows)
}

/// Median systolic blood pressure: the median ABP amplitude at the detected
/// peak indices (even counts average the two central order statistics).
pub fn derive_sbp(abp_window: &Window, peaks: &[usize]) -> Result<f64> {
    if peaks.is_empty() {
        return Err(Error::Rejection("no peaks in ABP window".into()));
    }
    let values: Vec<f64> = peaks.iter().map(|&i| abp_window.samples[i]).collect();
    Ok(median(values))
}

/// Heart rate in bpm from the median inter-peak interval.
pub fn derive_hr(peaks: &[usize], fs: f64) -> Result<f64> {
    if peaks.len() < 2 {
        return Err(Error::Rejection(format!(
            "need >= 2 peaks to derive heart rate, got {}",
            peaks.len()
        )));
    }
    let intervals: Vec<f64> = peaks.windows(2).map(|p| (p[1] - p[0]) as f64).collect();
    let median_interval_s = median(intervals) / fs;
    Ok(60.0 / median_interval_s)
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Rescales a window to zero mean and unit population standard deviation.
/// Near-constant windows are rejected (treated as `low_snr` downstream).
pub fn normalize(window: &Window) -> Result<Window> {
    let n = window.samples.len() as f64;
    let mean = window.samples.iter().sum::<f64>() / n;
    let var = window
        .samples
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if std <= 1e-8 {
        return Err(Error::Rejection(
            "window has near-zero variance, cannot normalize".into(),
        ));
    }
    Ok(Window {
        samples: window.samples.iter().map(|v| (v - mean) / std).collect(),
        fs: window.fs,
        source_offset: window.source_offset,
    })
}

/// Applies the acceptance thresholds in the fixed order SNR, SBP, HR; the
/// first failing check determines the rejection reason.
pub fn quality_gate(snr_db: f64, sbp: f64, hr: f64, thresholds: &GateThresholds) -> QualityVerdict {
    if !(snr_db >= thresholds.snr_min_db) {
        return QualityVerdict::rejected(RejectReason::LowSnr);
    }
    if !(sbp >= thresholds.sbp_min && sbp <= thresholds.sbp_max) {
        return QualityVerdict::rejected(RejectReason::SbpOutOfRange);
    }
    if !(hr >= thresholds.hr_min && hr <= thresholds.hr_max) {
        return QualityVerdict::rejected(RejectReason::HrOutOfRange);
    }
    QualityVerdict::ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn windowing_matches_hand_computed_offsets() {
        let signal = vec![0.0; 2500];
        let windows = segment_windows(&signal, 125.0, 5.0, 2.5).unwrap();
        assert_eq!(windows.len(), 7);
        let offsets: Vec<usize> = windows.iter().map(|w| w.source_offset).collect();
        assert_eq!(offsets, vec![0, 312, 624, 936, 1248, 1560, 1872]);
        assert!(windows.iter().all(|w| w.samples.len() == 625));
    }

    #[test]
    fn exactly_one_window_at_boundary() {
        let windows = segment_windows(&vec![0.0; 625], 125.0, 5.0, 2.5).unwrap();
        assert_eq!(windows.len(), 1);
    }

    #[test]
    fn below_one_window_is_empty() {
        let windows = segment_windows(&vec![0.0; 624], 125.0, 5.0, 2.5).unwrap();
        assert!(windows.is_empty());
    }

    #[test]
    fn bad_overlap_is_config_error() {
        assert!(segment_windows(&[0.0; 10], 125.0, 2.0, 2.0).is_err());
        assert!(segment_windows(&[0.0; 10], 125.0, 2.0, -1.0).is_err());
    }

    #[test]
    fn sbp_median_odd_and_even() {
        let w = Window {
            samples: vec![118.0, 120.0, 122.0, 119.0, 121.0],
            fs: 125.0,
            source_offset: 0,
        };
        let sbp = derive_sbp(&w, &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(sbp, 120.0);

        let w = Window {
            samples: vec![100.0, 180.0],
            fs: 125.0,
            source_offset: 0,
        };
        assert_eq!(derive_sbp(&w, &[0, 1]).unwrap(), 140.0);
    }

    #[test]
    fn sbp_without_peaks_is_rejected() {
        let w = Window {
            samples: vec![0.0; 10],
            fs: 125.0,
            source_offset: 0,
        };
        assert!(derive_sbp(&w, &[]).is_err());
    }

    #[test]
    fn hr_from_one_second_intervals() {
        let hr = derive_hr(&[0, 125, 250, 375, 500], 125.0).unwrap();
        assert_eq!(hr, 60.0);
    }

    #[test]
    fn hr_even_interval_count_uses_central_pair() {
        // Intervals 62, 63, 62, 63 samples -> median 62.5 -> 120 bpm.
        let hr = derive_hr(&[0, 62, 125, 187, 250], 125.0).unwrap();
        assert!((hr - 120.0).abs() < 1e-9, "hr {hr}");
    }

    #[test]
    fn hr_needs_two_peaks() {
        assert!(derive_hr(&[100], 125.0).is_err());
        assert!(derive_hr(&[], 125.0).is_err());
    }

    #[test]
    fn normalize_closed_form() {
        let w = Window {
            samples: vec![1.0, 2.0, 3.0],
            fs: 125.0,
            source_offset: 0,
        };
        let n = normalize(&w).unwrap();
        let expected = [-1.224745, 0.0, 1.224745];
        for (got, want) in n.samples.iter().zip(expected.iter()) {
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn normalize_rejects_constant() {
        let w = Window {
            samples: vec![7.0; 100],
            fs: 125.0,
            source_offset: 0,
        };
        assert!(normalize(&w).is_err());
    }

    #[test]
    fn gate_accepts_and_orders_reasons() {
        let t = GateThresholds::default();
        assert!(quality_gate(0.0, 120.0, 70.0, &t).accepted);
        assert_eq!(
            quality_gate(-8.0, 120.0, 70.0, &t).reason,
            RejectReason::LowSnr
        );
        assert_eq!(
            quality_gate(0.0, 79.9, 70.0, &t).reason,
            RejectReason::SbpOutOfRange
        );
        assert_eq!(
            quality_gate(0.0, 120.0, 145.0, &t).reason,
            RejectReason::HrOutOfRange
        );
        // SNR is checked first even when several limits fail.
        assert_eq!(
            quality_gate(-8.0, 200.0, 145.0, &t).reason,
            RejectReason::LowSnr
        );
        // -inf sentinel always fails the SNR check.
        assert_eq!(
            quality_gate(f64::NEG_INFINITY, 120.0, 70.0, &t).reason,
            RejectReason::LowSnr
        );
    }

    proptest! {
        #[test]
        fn windows_cover_signal_with_increasing_offsets(
            len in 0usize..5000,
            fs in 20.0f64..500.0,
            window_s in 0.5f64..6.0,
            overlap_frac in 0.0f64..0.9,
        ) {
            let overlap_s = window_s * overlap_frac;
            let signal = vec![0.0; len];
            let Ok(windows) = segment_windows(&signal, fs, window_s, overlap_s) else {
                // Degenerate hop; nothing to check.
                return Ok(());
            };
            let n = (fs * window_s).round() as usize;
            let hop = (fs * (window_s - overlap_s)).floor() as usize;
            for (k, w) in windows.iter().enumerate() {
                prop_assert_eq!(w.source_offset, k * hop);
                prop_assert_eq!(w.samples.len(), n);
                prop_assert!(w.source_offset + n <= len);
            }
            if len >= n {
                prop_assert_eq!(windows.len(), (len - n) / hop + 1);
            } else {
                prop_assert!(windows.is_empty());
            }
        }

        #[test]
        fn normalize_is_idempotent_and_affine_invariant(
            seed in 0u64..1000,
            scale in 0.1f64..50.0,
            shift in -100.0f64..100.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w = Window { samples, fs: 125.0, source_offset: 0 };
            let Ok(n1) = normalize(&w) else { return Ok(()); };
            let n2 = normalize(&n1).unwrap();
            for (a, b) in n1.samples.iter().zip(n2.samples.iter()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
            let affine = Window {
                samples: w.samples.iter().map(|v| scale * v + shift).collect(),
                fs: w.fs,
                source_offset: 0,
            };
            let na = normalize(&affine).unwrap();
            for (a, b) in n1.samples.iter().zip(na.samples.iter()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn gate_is_monotone_in_snr_threshold(
            snr in -20.0f64..20.0,
            sbp in 60.0f64..200.0,
            hr in 30.0f64..160.0,
            thr_lo in -15.0f64..5.0,
            delta in 0.0f64..10.0,
        ) {
            let lo = GateThresholds { snr_min_db: thr_lo, ..GateThresholds::default() };
            let hi = GateThresholds { snr_min_db: thr_lo + delta, ..GateThresholds::default() };
            let accepted_lo = quality_gate(snr, sbp, hr, &lo).accepted;
            let accepted_hi = quality_gate(snr, sbp, hr, &hi).accepted;
            // Raising the SNR threshold never accepts a previously rejected window.
            prop_assert!(!(accepted_hi && !accepted_lo));
        }
    }
}
