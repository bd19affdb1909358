//! Evaluates a quickly trained checkpoint and prints the full report: the
//! accuracy grid row and both confusion matrices (rows = ground truth).
//!
//! Run with: `cargo run --release --example evaluate_report`

use ppgbp::data::{SegmentationScheme, Split};
use ppgbp::eval::evaluate;
use ppgbp::nn::Profile;
use ppgbp::pipeline::{build_dataset, preprocess_corpus, DatasetConfig, PreprocessConfig};
use ppgbp::synth::{generate_corpus, SynthConfig};
use ppgbp::train::{pretrain, Task, TrainConfig};

fn main() {
    let fs = 62.5;
    let scheme = SegmentationScheme::named("hph").unwrap();
    let synth = SynthConfig { fs, ..Default::default() };
    let records = generate_corpus(&synth, 5, 10, &scheme, 45).unwrap();
    let (samples, _) = preprocess_corpus(&records, &PreprocessConfig::with_fs(fs)).unwrap();
    let dataset = build_dataset(
        &samples,
        &DatasetConfig {
            scheme: scheme.clone(),
            per_bin_quota: 40,
            min_windows: 120,
            split_fractions: (0.5, 0.2, 0.3),
            seed: 5,
        },
    )
    .unwrap();

    let mut config = TrainConfig::new(Task::Classification, "alexnet", Profile::Desk, 5);
    config.max_epochs = 12;
    config.patience = 6;
    let (checkpoint, _) = pretrain(&dataset, &config).unwrap();

    let (mut model, _) = checkpoint.restore().unwrap();
    let test = dataset.split_samples(Split::Test);
    let report = evaluate(
        &mut model,
        &test,
        &scheme,
        "test",
        "alexnet",
        "classification",
        128,
    )
    .unwrap();

    println!(
        "scheme {}  arch {}  task {}  split {}  n {}  accuracy {:.3}  mean|bin err| {:.3}\n",
        report.scheme,
        report.architecture,
        report.task,
        report.split,
        report.n_samples,
        report.accuracy,
        report.mean_abs_bin_distance
    );

    println!("raw confusion (rows = ground truth, cols = predicted):");
    for row in &report.confusion_raw {
        println!(
            "  {}",
            row.iter().map(|v| format!("{v:>5}")).collect::<Vec<_>>().join(" ")
        );
    }
    println!("\nrow-normalized:");
    for row in &report.confusion_normalized {
        println!(
            "  {}",
            row.iter().map(|v| format!("{v:>6.3}")).collect::<Vec<_>>().join(" ")
        );
    }
    if !report.zero_rows.is_empty() {
        println!("zero-count rows: {:?}", report.zero_rows);
    }
}
