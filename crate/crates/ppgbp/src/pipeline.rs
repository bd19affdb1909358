//! Record-to-sample preprocessing and balanced-dataset assembly.
//!
//! A subject record is filtered once as a whole, then cut into overlapping
//! windows. Each window is labeled from the ABP channel (median systolic
//! peak), quality-gated and normalized. Subjects can be processed in
//! parallel; results are merged in ascending subject order so the output is
//! independent of scheduling.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::data::{
    balance, eligible_subjects, per_bin_counts, split_subjects, BalancedDataset, SegmentationScheme,
    SubjectRecord, WindowSample,
};
use crate::dsp::{
    apply_filter, compute_snr, derive_hr, derive_sbp, design_bandpass, detect_peaks, normalize,
    quality_gate, segment_windows, FilterSpec, GateThresholds, RejectReason, Window,
};
use crate::error::{Error, Result};

/// Everything the preprocessing stage needs to know.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    /// Expected record sampling rate; records at a different rate are rejected.
    pub fs: f64,
    pub filter_order: usize,
    pub f_low: f64,
    pub f_high: f64,
    pub window_s: f64,
    pub overlap_s: f64,
    pub thresholds: GateThresholds,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            fs: 125.0,
            filter_order: 4,
            f_low: 0.5,
            f_high: 8.0,
            window_s: 5.0,
            overlap_s: 2.5,
            thresholds: GateThresholds::default(),
        }
    }
}

impl PreprocessConfig {
    pub fn with_fs(fs: f64) -> Self {
        PreprocessConfig {
            fs,
            ..Default::default()
        }
    }

    pub fn window_len(&self) -> usize {
        (self.fs * self.window_s).round() as usize
    }

    pub fn filter_spec(&self) -> FilterSpec {
        FilterSpec {
            order: self.filter_order,
            f_low: self.f_low,
            f_high: self.f_high,
            fs: self.fs,
        }
    }
}

/// Rejection bookkeeping for one preprocessing run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PreprocessStats {
    pub windows_total: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<&'static str, usize>,
}

impl PreprocessStats {
    fn count(&mut self, reason: RejectReason) {
        self.windows_total += 1;
        if reason == RejectReason::Ok {
            self.accepted += 1;
        } else {
            *self.rejected.entry(reason.as_str()).or_insert(0) += 1;
        }
    }

    fn merge(&mut self, other: &PreprocessStats) {
        self.windows_total += other.windows_total;
        self.accepted += other.accepted;
        for (reason, n) in &other.rejected {
            *self.rejected.entry(reason).or_insert(0) += n;
        }
    }
}

/// Preprocesses one subject record into accepted window samples.
pub fn preprocess_record(
    record: &SubjectRecord,
    config: &PreprocessConfig,
) -> Result<(Vec<WindowSample>, PreprocessStats)> {
    record.validate()?;
    if (record.fs - config.fs).abs() > 1e-9 {
        return Err(Error::Format {
            offset: 0,
            message: format!(
                "subject {}: sampling rate {} does not match configured {}",
                record.subject_id, record.fs, config.fs
            ),
        });
    }

    let coeffs = design_bandpass(&config.filter_spec())?;
    let filtered_ppg = match apply_filter(&record.ppg, &coeffs) {
        Ok(v) => v,
        // Records shorter than the filter padding yield no windows.
        Err(Error::Rejection(_)) => return Ok((Vec::new(), PreprocessStats::default())),
        Err(e) => return Err(e),
    };

    let ppg_windows = segment_windows(&filtered_ppg, record.fs, config.window_s, config.overlap_s)?;
    let raw_windows = segment_windows(&record.ppg, record.fs, config.window_s, config.overlap_s)?;
    let abp_windows = segment_windows(&record.abp, record.fs, config.window_s, config.overlap_s)?;
    debug_assert_eq!(ppg_windows.len(), abp_windows.len());

    let mut stats = PreprocessStats::default();
    let mut samples = Vec::new();
    for (k, ((ppg_w, raw_w), abp_w)) in ppg_windows
        .iter()
        .zip(raw_windows.iter())
        .zip(abp_windows.iter())
        .enumerate()
    {
        match process_window(ppg_w, raw_w, abp_w, config)? {
            WindowOutcome::Accepted { ppg, sbp, hr, snr } => {
                stats.count(RejectReason::Ok);
                samples.push(WindowSample {
                    subject_id: record.subject_id,
                    window_index: k as u32,
                    sbp: sbp as f32,
                    hr: hr as f32,
                    snr: snr as f32,
                    ppg,
                });
            }
            WindowOutcome::Rejected(reason) => stats.count(reason),
        }
    }
    Ok((samples, stats))
}

enum WindowOutcome {
    Accepted {
        ppg: Vec<f32>,
        sbp: f64,
        hr: f64,
        snr: f64,
    },
    Rejected(RejectReason),
}

fn process_window(
    ppg_w: &Window,
    raw_w: &Window,
    abp_w: &Window,
    config: &PreprocessConfig,
) -> Result<WindowOutcome> {
    let peaks = detect_peaks(abp_w);
    if peaks.len() < 2 {
        return Ok(WindowOutcome::Rejected(RejectReason::NoPeaks));
    }
    let sbp = derive_sbp(abp_w, &peaks)?;
    let hr = derive_hr(&peaks, abp_w.fs)?;
    // Quality is judged on the raw window: broadband noise marks a bad
    // acquisition even where the band-pass would remove it.
    let snr = compute_snr(raw_w)?;

    let verdict = quality_gate(snr, sbp, hr, &config.thresholds);
    if !verdict.accepted {
        return Ok(WindowOutcome::Rejected(verdict.reason));
    }
    let normalized = match normalize(ppg_w) {
        Ok(w) => w,
        Err(Error::Rejection(_)) => return Ok(WindowOutcome::Rejected(RejectReason::LowSnr)),
        Err(e) => return Err(e),
    };
    Ok(WindowOutcome::Accepted {
        ppg: normalized.samples.iter().map(|&v| v as f32).collect(),
        sbp,
        hr,
        snr,
    })
}

/// Preprocesses a corpus, subjects in parallel, output in ascending subject order.
pub fn preprocess_corpus(
    records: &[SubjectRecord],
    config: &PreprocessConfig,
) -> Result<(Vec<WindowSample>, PreprocessStats)> {
    let mut per_subject: Vec<(u32, Vec<WindowSample>, PreprocessStats)> = records
        .par_iter()
        .map(|r| preprocess_record(r, config).map(|(s, st)| (r.subject_id, s, st)))
        .collect::<Result<Vec<_>>>()?;
    per_subject.sort_by_key(|(id, _, _)| *id);

    let mut samples = Vec::new();
    let mut stats = PreprocessStats::default();
    for (_, s, st) in per_subject {
        samples.extend(s);
        stats.merge(&st);
    }
    Ok((samples, stats))
}

/// Parameters for balanced dataset assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub scheme: SegmentationScheme,
    pub per_bin_quota: usize,
    pub min_windows: usize,
    pub split_fractions: (f64, f64, f64),
    pub seed: u64,
}

/// Builds a balanced dataset from preprocessed samples: eligibility check,
/// per-bin balancing, then a subject-disjoint train/val/test split.
pub fn build_dataset(samples: &[WindowSample], config: &DatasetConfig) -> Result<BalancedDataset> {
    config.scheme.validate()?;
    let counts = per_bin_counts(samples, &config.scheme);
    let subjects = eligible_subjects(&counts, config.min_windows, config.per_bin_quota);
    if subjects.is_empty() {
        return Err(Error::Config(format!(
            "no eligible subjects for scheme '{}' at quota {} / min {}",
            config.scheme.name, config.per_bin_quota, config.min_windows
        )));
    }
    let balanced = balance(
        samples,
        &subjects,
        &config.scheme,
        config.per_bin_quota,
        config.seed,
    )?;
    let split_assignment = split_subjects(&subjects, config.split_fractions, config.seed)?;
    let dataset = BalancedDataset {
        scheme: config.scheme.clone(),
        per_bin_quota: config.per_bin_quota,
        samples: balanced,
        split_assignment,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// A record with clean pulses: ABP peaks at a fixed SBP, PPG a plain tone.
    fn clean_record(subject_id: u32, sbp: f64, seconds: f64, fs: f64) -> SubjectRecord {
        let n = (seconds * fs) as usize;
        let beat_hz = 1.2; // 72 bpm
        let ppg = (0..n)
            .map(|i| (2.0 * PI * beat_hz * i as f64 / fs).sin())
            .collect();
        let abp = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                let phase = (t * beat_hz).fract();
                let pulse = (-(phase - 0.3).powi(2) / (2.0 * 0.05f64.powi(2))).exp();
                (sbp - 40.0) + 40.0 * pulse
            })
            .collect();
        SubjectRecord {
            subject_id,
            fs,
            ppg,
            abp,
        }
    }

    #[test]
    fn clean_record_yields_accepted_windows_with_expected_sbp() {
        let record = clean_record(1, 120.0, 60.0, 125.0);
        let config = PreprocessConfig::default();
        let (samples, stats) = preprocess_record(&record, &config).unwrap();
        assert!(stats.windows_total > 0);
        assert!(
            samples.len() as f64 >= 0.9 * stats.windows_total as f64,
            "accepted {} of {}",
            samples.len(),
            stats.windows_total
        );
        for s in &samples {
            assert!((s.sbp - 120.0).abs() < 1.5, "sbp {}", s.sbp);
            assert!((s.hr - 72.0).abs() < 3.0, "hr {}", s.hr);
            // Normalized to zero mean, unit variance.
            let mean: f32 = s.ppg.iter().sum::<f32>() / s.ppg.len() as f32;
            assert!(mean.abs() < 1e-4);
        }
    }

    #[test]
    fn out_of_range_sbp_is_rejected() {
        let record = clean_record(1, 200.0, 30.0, 125.0);
        let config = PreprocessConfig::default();
        let (samples, stats) = preprocess_record(&record, &config).unwrap();
        assert!(samples.is_empty());
        assert!(stats.rejected.get("sbp_out_of_range").copied().unwrap_or(0) > 0);
    }

    #[test]
    fn wrong_sampling_rate_is_format_error() {
        let record = clean_record(1, 120.0, 30.0, 100.0);
        let config = PreprocessConfig::default(); // expects 125 Hz
        assert!(matches!(
            preprocess_record(&record, &config),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn corpus_order_is_independent_of_input_order() {
        let a = clean_record(2, 110.0, 40.0, 125.0);
        let b = clean_record(5, 130.0, 40.0, 125.0);
        let config = PreprocessConfig::default();
        let (s1, _) = preprocess_corpus(&[a.clone(), b.clone()], &config).unwrap();
        let (s2, _) = preprocess_corpus(&[b, a], &config).unwrap();
        assert_eq!(s1, s2);
    }
}
