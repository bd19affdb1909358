//! Deterministic synthetic PPG/ABP subject generator.
//!
//! Each subject is a seeded draw of morphology parameters (pulse width,
//! dicrotic amplitude and delay, a personal SBP-to-shape bias) plus a slow
//! triangular SBP sweep across the full 80-180 mmHg range. The ABP channel is
//! scaled per beat so its sampled systolic peak equals the per-beat target
//! exactly; the PPG channel encodes SBP in the pulse shape (systolic width
//! narrows, dicrotic wave grows), composed through the subject's morphology.
//!
//! The per-subject bias shifts the SBP-to-shape mapping, so a population
//! model faces an irreducible per-subject error that only fine tuning on
//! that subject's data can remove. That is what makes personalization
//! measurably effective on this corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{SegmentationScheme, SubjectRecord};
use crate::error::Result;
use crate::nn::mix_seed;

/// SBP sweep endpoints; kept inside [80, 180] so window medians stay in range
/// after per-beat jitter.
pub const SWEEP_LOW: f64 = 82.0;
pub const SWEEP_HIGH: f64 = 178.0;

/// Generator settings shared across a corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub fs: f64,
    /// White-noise standard deviation relative to the unit systolic pulse
    /// amplitude.
    pub noise_level: f64,
    /// Magnitude of the per-subject SBP-to-shape bias, mmHg. Subject biases
    /// are drawn uniformly from [-bias, +bias].
    pub subject_bias_mmhg: f64,
    /// SBP sweep speed in mmHg/s; slow enough that one 5 s window is nearly
    /// iso-SBP.
    pub sweep_rate: f64,
    /// Oversampling margin applied when sizing a corpus for a windows-per-bin
    /// target.
    pub margin: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            fs: 125.0,
            noise_level: 0.05,
            subject_bias_mmhg: 8.0,
            sweep_rate: 0.9,
            margin: 1.5,
        }
    }
}

/// Subject-specific morphology parameters, fully determined by
/// (corpus seed, subject id).
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectProfile {
    pub subject_id: u32,
    pub hr_base: f64,
    pub pulse_width_scale: f64,
    pub dicrotic_amp: f64,
    pub dicrotic_delay_frac: f64,
    /// Personal offset of the SBP-to-shape mapping, mmHg.
    pub sbp_shape_bias: f64,
    pub noise_level: f64,
}

pub fn subject_profile(config: &SynthConfig, corpus_seed: u64, subject_id: u32) -> SubjectProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(corpus_seed, subject_id as u64));
    SubjectProfile {
        subject_id,
        hr_base: rng.gen_range(62.0..88.0),
        pulse_width_scale: rng.gen_range(0.85..1.15),
        dicrotic_amp: rng.gen_range(0.15..0.45),
        dicrotic_delay_frac: rng.gen_range(0.34..0.46),
        sbp_shape_bias: rng.gen_range(-config.subject_bias_mmhg..=config.subject_bias_mmhg),
        noise_level: config.noise_level,
    }
}

/// Per-beat SBP targets for a triangular sweep of the given duration.
pub fn sweep_trajectory(
    config: &SynthConfig,
    profile: &SubjectProfile,
    corpus_seed: u64,
    duration_s: f64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
        corpus_seed,
        0x5EED_0000_0000_0000 ^ profile.subject_id as u64,
    ));
    let span = SWEEP_HIGH - SWEEP_LOW;
    // One full triangle covers 2 * span mmHg of travel.
    let period = 2.0 * span / config.sweep_rate;
    let phase0: f64 = rng.gen_range(0.0..1.0);

    let mut beats = Vec::new();
    let mut t = 0.0;
    while t < duration_s {
        let hr = profile.hr_base + rng.gen_range(-2.0..2.0);
        let phase = (t / period + phase0).fract();
        let tri = if phase < 0.5 { 2.0 * phase } else { 2.0 * (1.0 - phase) };
        let sbp = (SWEEP_LOW + span * tri + rng.gen_range(-1.5..1.5))
            .clamp(crate::data::SBP_RANGE_MIN, crate::data::SBP_RANGE_MAX);
        beats.push(sbp);
        t += 60.0 / hr;
    }
    beats
}

/// Builds one subject record from an explicit per-beat SBP trajectory.
///
/// Beat periods, waveform composition and noise are all seeded by
/// (corpus seed, subject id), so the record is bit-reproducible.
pub fn generate_from_trajectory(
    config: &SynthConfig,
    profile: &SubjectProfile,
    corpus_seed: u64,
    sbp_per_beat: &[f64],
) -> SubjectRecord {
    let fs = config.fs;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
        corpus_seed,
        0xBEA7_0000_0000_0000 ^ profile.subject_id as u64,
    ));

    // Beat onset times.
    let mut onsets = Vec::with_capacity(sbp_per_beat.len() + 1);
    let mut t = 0.0;
    for _ in 0..sbp_per_beat.len() {
        onsets.push(t);
        let hr = profile.hr_base + rng.gen_range(-2.0..2.0);
        t += 60.0 / hr;
    }
    onsets.push(t);
    let n = (t * fs).floor() as usize;

    let mut abp = vec![0.0f64; n];
    let mut ppg = vec![0.0f64; n];

    for (k, &sbp) in sbp_per_beat.iter().enumerate() {
        let t0 = onsets[k];
        let t1 = onsets[k + 1];
        let period = t1 - t0;
        let i0 = (t0 * fs).ceil() as usize;
        let i1 = ((t1 * fs).ceil() as usize).min(n);
        if i0 >= i1 {
            continue;
        }

        // ABP: systolic bump plus a small dicrotic wave, rescaled so the
        // sampled maximum hits the target SBP exactly.
        let pulse_pressure = 38.0 + 0.25 * (sbp - 130.0);
        let dbp = sbp - pulse_pressure;
        let mut shape = Vec::with_capacity(i1 - i0);
        let mut shape_max = 0.0f64;
        for i in i0..i1 {
            let phi = (i as f64 / fs - t0) / period;
            let sys = (-(phi - 0.30).powi(2) / (2.0 * 0.08f64.powi(2))).exp();
            let dic = 0.2 * (-(phi - 0.55).powi(2) / (2.0 * 0.10f64.powi(2))).exp();
            let w = sys + dic;
            shape_max = shape_max.max(w);
            shape.push(w);
        }
        for (i, w) in (i0..i1).zip(shape.iter()) {
            abp[i] = dbp + pulse_pressure * w / shape_max;
        }

        // PPG: two Gaussians whose width and relative amplitude follow the
        // subject-biased SBP.
        let eff = (sbp + profile.sbp_shape_bias).clamp(70.0, 190.0);
        let sigma_sys = profile.pulse_width_scale * (0.11 - 0.00045 * (eff - 130.0));
        let sigma_dic = 0.7 * sigma_sys;
        let amp_dic = (profile.dicrotic_amp + 0.005 * (eff - 130.0)).clamp(0.05, 0.9);
        let t_sys = t0 + 0.30 * period;
        let t_dic = t0 + profile.dicrotic_delay_frac * period;

        let lo = (((t0 - 0.6 * period) * fs).floor().max(0.0)) as usize;
        let hi = (((t1 + 0.6 * period) * fs).ceil() as usize).min(n);
        for (i, v) in ppg.iter_mut().enumerate().take(hi).skip(lo) {
            let ts = i as f64 / fs;
            let g_sys = (-(ts - t_sys).powi(2) / (2.0 * sigma_sys * sigma_sys)).exp();
            let g_dic = (-(ts - t_dic).powi(2) / (2.0 * sigma_dic * sigma_dic)).exp();
            *v += g_sys + amp_dic * g_dic;
        }
    }

    // Slow baseline wander (removed by the band-pass) plus white noise.
    let drift_freq = rng.gen_range(0.12..0.20);
    let drift_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    for (i, v) in ppg.iter_mut().enumerate() {
        let ts = i as f64 / fs;
        *v += 0.3 * (std::f64::consts::TAU * drift_freq * ts + drift_phase).sin();
    }
    if profile.noise_level > 0.0 {
        // Noise std is relative to the systolic pulse amplitude, which is 1
        // by construction.
        let noise_std = profile.noise_level;
        for v in ppg.iter_mut() {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let g = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            *v += noise_std * g;
        }
    }

    SubjectRecord {
        subject_id: profile.subject_id,
        fs,
        ppg,
        abp,
    }
}

/// One subject with a full-range SBP sweep of the given duration.
pub fn generate_subject(
    config: &SynthConfig,
    corpus_seed: u64,
    subject_id: u32,
    duration_s: f64,
) -> SubjectRecord {
    let profile = subject_profile(config, corpus_seed, subject_id);
    let trajectory = sweep_trajectory(config, &profile, corpus_seed, duration_s);
    generate_from_trajectory(config, &profile, corpus_seed, &trajectory)
}

/// Record duration needed so every bin of the scheme can expect at least
/// `windows_per_bin_target` valid windows, including the oversampling margin.
pub fn duration_for_target(
    config: &SynthConfig,
    scheme: &SegmentationScheme,
    windows_per_bin_target: usize,
    window_s: f64,
    hop_s: f64,
) -> f64 {
    let span = SWEEP_HIGH - SWEEP_LOW;
    let min_coverage = scheme
        .edges
        .windows(2)
        .map(|pair| (pair[1].min(SWEEP_HIGH) - pair[0].max(SWEEP_LOW)).max(0.0))
        .fold(f64::INFINITY, f64::min);
    assert!(
        min_coverage > 0.0,
        "sweep range does not reach every bin of scheme '{}'",
        scheme.name
    );
    hop_s * windows_per_bin_target as f64 * config.margin * span / min_coverage + window_s
}

/// Generates `n_subjects` subjects sized for the scheme's per-bin target,
/// in parallel, deterministically.
pub fn generate_corpus(
    config: &SynthConfig,
    corpus_seed: u64,
    n_subjects: usize,
    scheme: &SegmentationScheme,
    windows_per_bin_target: usize,
) -> Result<Vec<SubjectRecord>> {
    let duration = duration_for_target(config, scheme, windows_per_bin_target, 5.0, 2.5);
    let records: Vec<SubjectRecord> = (0..n_subjects as u32)
        .into_par_iter()
        .map(|id| generate_subject(config, corpus_seed, id, duration))
        .collect();
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{derive_sbp, detect_peaks, segment_windows};

    #[test]
    fn profiles_are_deterministic_and_subject_specific() {
        let config = SynthConfig::default();
        let a = subject_profile(&config, 7, 3);
        let b = subject_profile(&config, 7, 3);
        assert_eq!(a, b);
        let c = subject_profile(&config, 7, 4);
        assert_ne!(a, c);
    }

    #[test]
    fn records_are_bit_identical_for_same_seed() {
        let config = SynthConfig::default();
        let a = generate_subject(&config, 11, 2, 40.0);
        let b = generate_subject(&config, 11, 2, 40.0);
        assert_eq!(a, b);
        let c = generate_subject(&config, 12, 2, 40.0);
        assert_ne!(a.ppg, c.ppg);
    }

    #[test]
    fn abp_peaks_recover_the_trajectory() {
        // Constant trajectory at 120 mmHg: every derived window SBP must sit
        // within 1 mmHg.
        let config = SynthConfig {
            noise_level: 0.0,
            ..Default::default()
        };
        let profile = subject_profile(&config, 5, 1);
        let trajectory = vec![120.0; 60];
        let record = generate_from_trajectory(&config, &profile, 5, &trajectory);
        let windows = segment_windows(&record.abp, record.fs, 5.0, 2.5).unwrap();
        assert!(windows.len() > 5);
        for w in &windows {
            let peaks = detect_peaks(&w);
            assert!(peaks.len() >= 3, "only {} peaks", peaks.len());
            let sbp = derive_sbp(&w, &peaks).unwrap();
            assert!((sbp - 120.0).abs() <= 1.0, "derived sbp {sbp}");
        }
    }

    #[test]
    fn different_subjects_same_trajectory_differ_in_shape() {
        let config = SynthConfig {
            noise_level: 0.0,
            ..Default::default()
        };
        let trajectory = vec![130.0; 40];
        let p1 = subject_profile(&config, 9, 1);
        let p2 = subject_profile(&config, 9, 2);
        let r1 = generate_from_trajectory(&config, &p1, 9, &trajectory);
        let r2 = generate_from_trajectory(&config, &p2, 9, &trajectory);
        let n = r1.ppg.len().min(r2.ppg.len());
        let l2: f64 = r1.ppg[..n]
            .iter()
            .zip(&r2.ppg[..n])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64;
        assert!(l2.sqrt() > 0.05, "waveform distance {}", l2.sqrt());
    }

    #[test]
    fn sweep_covers_full_range() {
        let config = SynthConfig::default();
        let profile = subject_profile(&config, 3, 0);
        let duration = 600.0;
        let trajectory = sweep_trajectory(&config, &profile, 3, duration);
        let min = trajectory.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = trajectory.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min < 88.0, "sweep floor {min}");
        assert!(max > 172.0, "sweep ceiling {max}");
        assert!(trajectory.iter().all(|&s| (80.0..=180.0).contains(&s)));
    }

    #[test]
    fn duration_scales_with_narrowest_bin() {
        let config = SynthConfig::default();
        let even10 = SegmentationScheme::named("even10").unwrap();
        let hph = SegmentationScheme::named("hph").unwrap();
        let d10 = duration_for_target(&config, &even10, 50, 5.0, 2.5);
        let dh = duration_for_target(&config, &hph, 50, 5.0, 2.5);
        assert!(d10 > dh);
    }
}
