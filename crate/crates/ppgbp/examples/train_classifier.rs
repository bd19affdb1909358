//! Pretrains a desk-profile classifier on a small synthetic corpus and prints
//! the per-epoch log plus the held-out test accuracy.
//!
//! Run with: `cargo run --release --example train_classifier`
//! (takes a few minutes on two cores)

use ppgbp::data::{SegmentationScheme, Split};
use ppgbp::eval::{accuracy, predict_bins, true_bins};
use ppgbp::nn::Profile;
use ppgbp::pipeline::{build_dataset, preprocess_corpus, DatasetConfig, PreprocessConfig};
use ppgbp::synth::{generate_corpus, SynthConfig};
use ppgbp::train::{pretrain, Task, TrainConfig};

fn main() {
    let fs = 62.5;
    let scheme = SegmentationScheme::named("even4").unwrap();
    let synth = SynthConfig { fs, ..Default::default() };

    println!("generating 12-subject corpus ...");
    let records = generate_corpus(&synth, 42, 12, &scheme, 45).unwrap();
    let (samples, _) = preprocess_corpus(&records, &PreprocessConfig::with_fs(fs)).unwrap();
    let dataset = build_dataset(
        &samples,
        &DatasetConfig {
            scheme: scheme.clone(),
            per_bin_quota: 40,
            min_windows: 160,
            split_fractions: (0.5, 0.2, 0.3),
            seed: 42,
        },
    )
    .unwrap();
    println!(
        "dataset: {} samples over {} subjects\n",
        dataset.samples.len(),
        dataset.split_assignment.len()
    );

    let mut config = TrainConfig::new(Task::Classification, "resnet18", Profile::Desk, 7);
    config.max_epochs = 20;
    config.patience = 8;
    println!("training desk resnet18 (batch {}, lr {}) ...", config.batch_size, config.lr);
    let (checkpoint, log) = pretrain(&dataset, &config).unwrap();

    println!("\n epoch  train_loss  val_loss  val_acc");
    for e in &log.epochs {
        println!(
            "  {:>4}  {:>9.4}  {:>8.4}  {:>7.3}",
            e.epoch, e.train_loss, e.val_loss, e.val_accuracy
        );
    }
    println!(
        "\nbest epoch {} (validation loss {:.4})",
        checkpoint.meta.epoch, checkpoint.meta.best_val_metric
    );

    let (mut model, _) = checkpoint.restore().unwrap();
    let test = dataset.split_samples(Split::Test);
    let pred = predict_bins(&mut model, &test, &scheme, 128).unwrap();
    let truth = true_bins(&test, &scheme);
    println!(
        "test accuracy: {:.3} over {} samples (chance {:.3})",
        accuracy(&pred, &truth).unwrap(),
        test.len(),
        1.0 / scheme.n_bins() as f64
    );
}
