//! Personalizes a pretrained classifier on one held-out subject: every 10th
//! SBP-sorted sample fine-tunes the network for a fixed 100 epochs, and the
//! best epoch by validation accuracy is kept.
//!
//! Run with: `cargo run --release --example personalize_subject`
//! (takes a few minutes on two cores)

use ppgbp::data::{SegmentationScheme, Split};
use ppgbp::eval::{accuracy, predict_bins, true_bins};
use ppgbp::nn::Profile;
use ppgbp::pipeline::{build_dataset, preprocess_corpus, DatasetConfig, PreprocessConfig};
use ppgbp::synth::{generate_corpus, SynthConfig};
use ppgbp::train::{
    personalize, pretrain, select_personalization_subjects, PersonalizeConfig, Task, TrainConfig,
};

fn main() {
    let fs = 62.5;
    let scheme = SegmentationScheme::named("even4").unwrap();
    let synth = SynthConfig { fs, ..Default::default() };

    println!("building corpus and pretraining ...");
    let records = generate_corpus(&synth, 21, 12, &scheme, 45).unwrap();
    let (samples, _) = preprocess_corpus(&records, &PreprocessConfig::with_fs(fs)).unwrap();
    let dataset = build_dataset(
        &samples,
        &DatasetConfig {
            scheme: scheme.clone(),
            per_bin_quota: 40,
            min_windows: 160,
            split_fractions: (0.5, 0.2, 0.3),
            seed: 21,
        },
    )
    .unwrap();

    let mut config = TrainConfig::new(Task::Classification, "resnet18", Profile::Desk, 3);
    config.max_epochs = 15;
    config.patience = 8;
    let (pretrained, _) = pretrain(&dataset, &config).unwrap();
    println!("pretrained: best epoch {}\n", pretrained.meta.epoch);

    let test_subjects: Vec<u32> = dataset
        .split_assignment
        .iter()
        .filter(|(_, s)| **s == Split::Test)
        .map(|(&id, _)| id)
        .collect();
    let chosen = select_personalization_subjects(&test_subjects, 1, 3).unwrap();
    let subject = chosen[0];
    println!("personalizing subject {subject} ...");

    let subject_samples = dataset.subject_samples(subject);
    let outcome = personalize(
        &pretrained,
        &subject_samples,
        &scheme,
        &PersonalizeConfig::default(),
    )
    .unwrap();
    println!(
        "fine-tune set {} samples, val {} / test {} samples; best epoch {}",
        outcome.split.finetune.len(),
        outcome.split.val.len(),
        outcome.split.test.len(),
        outcome.checkpoint.meta.epoch,
    );

    let subject_test: Vec<&ppgbp::data::WindowSample> = outcome
        .split
        .test
        .iter()
        .map(|&i| subject_samples[i])
        .collect();
    let truth = true_bins(&subject_test, &scheme);

    let (mut pre_model, _) = pretrained.restore().unwrap();
    let pre = accuracy(
        &predict_bins(&mut pre_model, &subject_test, &scheme, 128).unwrap(),
        &truth,
    )
    .unwrap();
    let (mut post_model, _) = outcome.checkpoint.restore().unwrap();
    let post = accuracy(
        &predict_bins(&mut post_model, &subject_test, &scheme, 128).unwrap(),
        &truth,
    )
    .unwrap();

    println!("\nsubject {subject} test-half accuracy: {pre:.3} before -> {post:.3} after");
    println!("(the subject-specific SBP-to-shape bias is what fine tuning recovers)");
}
