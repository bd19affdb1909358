//! Runs the preprocessing stage over a small synthetic corpus at three noise
//! levels and prints the quality-gate outcome per reason.
//!
//! Run with: `cargo run --release --example preprocess_windows`

use ppgbp::data::SegmentationScheme;
use ppgbp::pipeline::{preprocess_corpus, PreprocessConfig};
use ppgbp::synth::{generate_corpus, SynthConfig};

fn main() {
    let fs = 62.5;
    let scheme = SegmentationScheme::named("even4").unwrap();

    for noise in [0.0, 0.05, 10.0] {
        let synth = SynthConfig {
            fs,
            noise_level: noise,
            ..Default::default()
        };
        let records = generate_corpus(&synth, 7, 4, &scheme, 40).unwrap();
        let (samples, stats) = preprocess_corpus(&records, &PreprocessConfig::with_fs(fs)).unwrap();

        println!("noise level {noise}:");
        println!(
            "  {} windows -> {} accepted ({:.1}%)",
            stats.windows_total,
            stats.accepted,
            100.0 * stats.accepted as f64 / stats.windows_total as f64
        );
        for (reason, count) in &stats.rejected {
            println!("  rejected {reason}: {count}");
        }
        if !samples.is_empty() {
            let mut snrs: Vec<f32> = samples.iter().map(|s| s.snr).collect();
            snrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            println!(
                "  accepted SNR: median {:.1} dB, min {:.1} dB",
                snrs[snrs.len() / 2],
                snrs[0]
            );
            let s = &samples[0];
            println!(
                "  sample 0: subject {}, window {}, sbp {:.1} mmHg, hr {:.0} bpm, {} values",
                s.subject_id,
                s.window_index,
                s.sbp,
                s.hr,
                s.ppg.len()
            );
        }
        println!();
    }
}
