//! Builds balanced datasets for all four BP range segmentations from one
//! synthetic corpus and verifies the size identity
//! `total = subjects x bins x quota` for each.
//!
//! Run with: `cargo run --release --example build_dataset`

use ppgbp::data::{eligible_subjects, per_bin_counts, SegmentationScheme, Split};
use ppgbp::pipeline::{build_dataset, preprocess_corpus, DatasetConfig, PreprocessConfig};
use ppgbp::synth::{generate_corpus, SynthConfig};

fn main() {
    let fs = 62.5;
    let quota = 30;
    let synth = SynthConfig { fs, ..Default::default() };

    // Size the corpus for the narrowest bins (even10) so one corpus serves
    // every segmentation.
    let even10 = SegmentationScheme::named("even10").unwrap();
    let records = generate_corpus(&synth, 11, 8, &even10, quota + 10).unwrap();
    let (samples, _) = preprocess_corpus(&records, &PreprocessConfig::with_fs(fs)).unwrap();
    println!("{} preprocessed samples from {} subjects\n", samples.len(), records.len());

    println!(
        "{:>8} {:>6} {:>10} {:>10} {:>22}",
        "scheme", "bins", "eligible", "samples", "train/val/test subj"
    );
    for name in ["hph", "even4", "dgk", "even10"] {
        let scheme = SegmentationScheme::named(name).unwrap();
        let counts = per_bin_counts(&samples, &scheme);
        let eligible = eligible_subjects(&counts, quota * scheme.n_bins(), quota);

        let dataset = build_dataset(
            &samples,
            &DatasetConfig {
                scheme: scheme.clone(),
                per_bin_quota: quota,
                min_windows: quota * scheme.n_bins(),
                split_fractions: (0.5, 0.25, 0.25),
                seed: 7,
            },
        )
        .unwrap();
        // The identity every balanced dataset must satisfy.
        assert_eq!(
            dataset.samples.len(),
            dataset.split_assignment.len() * scheme.n_bins() * quota
        );
        let count = |s: Split| {
            dataset
                .split_assignment
                .values()
                .filter(|&&v| v == s)
                .count()
        };
        println!(
            "{:>8} {:>6} {:>10} {:>10} {:>14}/{}/{}",
            name,
            scheme.n_bins(),
            eligible.len(),
            dataset.samples.len(),
            count(Split::Train),
            count(Split::Val),
            count(Split::Test)
        );
    }
    println!("\nEach subject contributes exactly the quota to every bin; subjects");
    println!("never straddle splits.");
}
