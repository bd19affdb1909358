use ppgbp::data::SegmentationScheme;
use ppgbp::nn::Profile;
use ppgbp::pipeline::{build_dataset, preprocess_corpus, DatasetConfig, PreprocessConfig};
use ppgbp::synth::{generate_corpus, SynthConfig};
use ppgbp::train::{pretrain, Task, TrainConfig};
use std::time::Instant;

fn main() {
    let fs = 62.5;
    let scheme_name = std::env::args().nth(1).unwrap_or_else(|| "even4".into());
    let scheme = SegmentationScheme::named(&scheme_name).unwrap();
    let synth = SynthConfig { fs, ..Default::default() };
    let t0 = Instant::now();
    // 20 subjects sized for even10 coverage so the same corpus serves any scheme
    let even10 = SegmentationScheme::named("even10").unwrap();
    let records = generate_corpus(&synth, 42, 20, &even10, 60).unwrap();
    let (samples, _) = preprocess_corpus(&records, &PreprocessConfig::with_fs(fs)).unwrap();
    println!("corpus+preprocess: {:?}", t0.elapsed());
    let dataset = build_dataset(&samples, &DatasetConfig {
        scheme: scheme.clone(),
        per_bin_quota: 50,
        min_windows: 100,
        split_fractions: (0.5, 0.2, 0.3),
        seed: 42,
    }).unwrap();
    let train_n = dataset.split_samples(ppgbp::data::Split::Train).len();
    println!("dataset: {} samples, train {}", dataset.samples.len(), train_n);

    let mut config = TrainConfig::new(Task::Classification, "resnet18", Profile::Desk, 7);
    config.max_epochs = 30;
    config.patience = 10;
    let t0 = Instant::now();
    let (ckpt, log) = pretrain(&dataset, &config).unwrap();
    println!("{} epochs in {:?}", log.epochs.len(), t0.elapsed());
    for e in &log.epochs {
        println!("  epoch {} train {:.3} val {:.3} acc {:.3}", e.epoch, e.train_loss, e.val_loss, e.val_accuracy);
    }
    println!("best epoch {} val_loss {:.3}", ckpt.meta.epoch, ckpt.meta.best_val_metric);
    // test accuracy of the restored best checkpoint
    let (mut model, _) = ckpt.restore().unwrap();
    let test = dataset.split_samples(ppgbp::data::Split::Test);
    let pred = ppgbp::eval::predict_bins(&mut model, &test, &scheme, 128).unwrap();
    let truth = ppgbp::eval::true_bins(&test, &scheme);
    println!("test accuracy: {:.3} (chance {:.3})", ppgbp::eval::accuracy(&pred, &truth).unwrap(), 1.0 / scheme.n_bins() as f64);
}
