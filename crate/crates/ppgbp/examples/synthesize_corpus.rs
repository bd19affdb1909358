//! Generates one synthetic subject and shows what the generator produced:
//! morphology profile, SBP sweep coverage, and the label fidelity of the ABP
//! channel when run back through peak detection.
//!
//! Run with: `cargo run --release --example synthesize_corpus`

use ppgbp::dsp::{derive_hr, derive_sbp, detect_peaks, segment_windows};
use ppgbp::synth::{generate_subject, subject_profile, SynthConfig};

fn main() {
    let config = SynthConfig::default();
    let corpus_seed = 42;
    let subject_id = 3;
    let duration_s = 300.0;

    let profile = subject_profile(&config, corpus_seed, subject_id);
    println!("subject {subject_id} profile (seed {corpus_seed}):");
    println!("  heart rate base      {:.1} bpm", profile.hr_base);
    println!("  pulse width scale    {:.3}", profile.pulse_width_scale);
    println!("  dicrotic amplitude   {:.3}", profile.dicrotic_amp);
    println!("  dicrotic delay       {:.3} of beat", profile.dicrotic_delay_frac);
    println!("  SBP shape bias       {:+.2} mmHg", profile.sbp_shape_bias);

    let record = generate_subject(&config, corpus_seed, subject_id, duration_s);
    println!(
        "\nrecord: {} samples ({} s at {} Hz), PPG range [{:.2}, {:.2}]",
        record.ppg.len(),
        record.ppg.len() as f64 / record.fs,
        record.fs,
        record.ppg.iter().cloned().fold(f64::INFINITY, f64::min),
        record.ppg.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );

    // Close the loop: derive per-window SBP/HR from the ABP channel.
    let windows = segment_windows(&record.abp, record.fs, 5.0, 2.5).unwrap();
    let mut sbps = Vec::new();
    let mut hrs = Vec::new();
    for w in &windows {
        let peaks = detect_peaks(w);
        if peaks.len() >= 2 {
            sbps.push(derive_sbp(w, &peaks).unwrap());
            hrs.push(derive_hr(&peaks, w.fs).unwrap());
        }
    }
    let (sbp_min, sbp_max) = (
        sbps.iter().cloned().fold(f64::INFINITY, f64::min),
        sbps.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    println!(
        "\nderived from ABP over {} windows: SBP spans [{:.1}, {:.1}] mmHg, HR ~{:.0} bpm",
        sbps.len(),
        sbp_min,
        sbp_max,
        hrs.iter().sum::<f64>() / hrs.len() as f64
    );
    println!("(a full-length record sweeps the whole 80-180 mmHg range)");
}
