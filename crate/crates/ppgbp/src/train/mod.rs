//! Training: pretraining with early stopping on validation loss, and
//! personalization fine-tuning for a fixed epoch count with best-epoch
//! selection by validation accuracy. Both are bit-deterministic under seeds.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    personalization_split, BalancedDataset, SegmentationScheme, Split, WindowSample,
};
use crate::error::{Error, Result};
use crate::eval::{accuracy, batch_tensor, predict_bins, true_bins};
use crate::nn::{
    build_architecture, mix_seed, mse_loss, softmax_cross_entropy, AdamHyper, AdamState,
    CheckpointMeta, ForwardCtx, HeadSpec, Model, ModelCheckpoint, Profile,
};

/// Prediction target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

impl Task {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Task::Classification),
            "regression" => Ok(Task::Regression),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Regression => "regression",
        }
    }
}

/// Pretraining configuration. Defaults: Adam at lr 0.001, batch size 128,
/// early stopping after 10 epochs without a new best validation loss,
/// at most 200 epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub architecture: String,
    pub profile: Profile,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(task: Task, architecture: &str, profile: Profile, seed: u64) -> Self {
        TrainConfig {
            task,
            architecture: architecture.to_string(),
            profile,
            lr: 0.001,
            batch_size: 128,
            patience: 10,
            max_epochs: 200,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch size must be >= 2 (batch normalization)".into(),
            ));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// One completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub wall_s: f64,
}

/// Per-epoch log plus the selected epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainLog {
    /// Line-oriented log: one record per epoch. Wall-clock time lives only
    /// here, never in data artifacts.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,train_loss,val_loss,val_accuracy,wall_s\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.3}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_accuracy, e.wall_s
            ));
        }
        out.push_str(&format!("# best_epoch={}\n", self.best_epoch));
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Early stopping on validation loss: stop once `patience` consecutive
/// epochs fail to set a new strict best.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    NewBest,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            StopDecision::NewBest
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Best-epoch tracking by maximum validation accuracy, earliest epoch on ties.
#[derive(Debug, Clone)]
pub struct BestAccuracy {
    best: f64,
    best_epoch: usize,
}

impl BestAccuracy {
    pub fn new() -> Self {
        BestAccuracy {
            best: f64::NEG_INFINITY,
            best_epoch: 0,
        }
    }

    /// Returns true when this epoch sets a new (strictly better) best.
    pub fn observe(&mut self, epoch: usize, val_accuracy: f64) -> bool {
        if val_accuracy > self.best {
            self.best = val_accuracy;
            self.best_epoch = epoch;
            true
        } else {
            false
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

impl Default for BestAccuracy {
    fn default() -> Self {
        Self::new()
    }
}

fn class_labels(samples: &[&WindowSample], scheme: &SegmentationScheme) -> Vec<usize> {
    true_bins(samples, scheme)
}

fn regression_targets(samples: &[&WindowSample]) -> Vec<f64> {
    samples.iter().map(|s| s.sbp as f64).collect()
}

/// One optimizer step over a batch. Returns the batch loss.
fn train_step(
    model: &mut Model<f32>,
    adam: &mut AdamState<f32>,
    batch: &[&WindowSample],
    scheme: &SegmentationScheme,
    task: Task,
) -> Result<f64> {
    let x = batch_tensor(batch)?;
    let ctx = ForwardCtx::train(adam.step);
    let out = model.forward(&x, &ctx)?;
    let (loss, grad) = match task {
        Task::Classification => softmax_cross_entropy(&out, &class_labels(batch, scheme))?,
        Task::Regression => mse_loss(&out, &regression_targets(batch))?,
    };
    if !loss.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite training loss at optimizer step {}",
            adam.step
        )));
    }
    model.backward(&grad)?;
    adam.step_with(|f| model.visit_params(f));
    Ok(loss)
}

/// Mean loss and bin accuracy over a sample set in eval mode.
pub fn evaluate_loss_accuracy(
    model: &mut Model<f32>,
    samples: &[&WindowSample],
    scheme: &SegmentationScheme,
    task: Task,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty split".into()));
    }
    let ctx = ForwardCtx::eval();
    let mut loss_sum = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let x = batch_tensor(chunk)?;
        let out = model.forward(&x, &ctx)?;
        let (loss, _) = match task {
            Task::Classification => softmax_cross_entropy(&out, &class_labels(chunk, scheme))?,
            Task::Regression => mse_loss(&out, &regression_targets(chunk))?,
        };
        loss_sum += loss * chunk.len() as f64;
    }
    let pred = predict_bins(model, samples, scheme, batch_size)?;
    let truth = true_bins(samples, scheme);
    Ok((loss_sum / samples.len() as f64, accuracy(&pred, &truth)?))
}

fn shuffled_batches(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    drop_last: bool,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xE70C_0000 + epoch as u64));
    order.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    if drop_last {
        if let Some(last) = batches.last() {
            if last.len() < batch_size {
                batches.pop();
            }
        }
    }
    batches
}

fn checkpoint_meta(config: &TrainConfig, scheme: &str, epoch: usize, metric: f64, adam: &AdamState<f32>) -> CheckpointMeta {
    CheckpointMeta {
        seed: config.seed,
        epoch,
        best_val_metric: metric,
        task: config.task.as_str().to_string(),
        scheme: scheme.to_string(),
        adam_step: adam.step,
        adam_hyper: adam.hyper,
    }
}

/// Pretrains on the dataset's train split with per-epoch validation.
///
/// Stops when the validation loss has not improved for `patience` epochs or
/// `max_epochs` is reached; the returned checkpoint holds the parameters of
/// the best-validation-loss epoch.
pub fn pretrain(
    dataset: &BalancedDataset,
    config: &TrainConfig,
) -> Result<(ModelCheckpoint, TrainLog)> {
    config.validate()?;
    let train_samples = dataset.split_samples(Split::Train);
    let val_samples = dataset.split_samples(Split::Val);
    if train_samples.is_empty() || val_samples.is_empty() {
        return Err(Error::Config(
            "dataset needs nonempty train and val splits".into(),
        ));
    }
    let n_samp = train_samples[0].ppg.len();
    let head = match config.task {
        Task::Classification => HeadSpec::Classification {
            bins: dataset.scheme.n_bins(),
        },
        Task::Regression => HeadSpec::Regression,
    };
    let arch = build_architecture(&config.architecture, head, config.profile, n_samp)?;
    let mut model: Model<f32> = Model::from_config(&arch, config.seed)?;
    let mut adam = AdamState::new(&model.param_shapes(), AdamHyper::with_lr(config.lr));

    let mut log = TrainLog::default();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best: Option<ModelCheckpoint> = None;

    for epoch in 0..config.max_epochs {
        let epoch_start = Instant::now();
        let batches = shuffled_batches(
            train_samples.len(),
            config.batch_size,
            config.seed,
            epoch,
            true,
        );
        if batches.is_empty() {
            return Err(Error::Config(format!(
                "train split has {} samples, smaller than one batch of {}",
                train_samples.len(),
                config.batch_size
            )));
        }
        let mut train_loss_sum = 0.0;
        let mut train_count = 0usize;
        for batch_idx in &batches {
            let batch: Vec<&WindowSample> = batch_idx.iter().map(|&i| train_samples[i]).collect();
            let loss = train_step(&mut model, &mut adam, &batch, &dataset.scheme, config.task)?;
            train_loss_sum += loss * batch.len() as f64;
            train_count += batch.len();
        }
        let (val_loss, val_accuracy) = evaluate_loss_accuracy(
            &mut model,
            &val_samples,
            &dataset.scheme,
            config.task,
            config.batch_size,
        )?;

        log.epochs.push(EpochRecord {
            epoch,
            train_loss: train_loss_sum / train_count as f64,
            val_loss,
            val_accuracy,
            wall_s: epoch_start.elapsed().as_secs_f64(),
        });

        match stopper.observe(epoch, val_loss) {
            StopDecision::NewBest => {
                best = Some(ModelCheckpoint::capture(
                    &mut model,
                    &adam,
                    checkpoint_meta(config, &dataset.scheme.name, epoch, val_loss, &adam),
                ));
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    log.best_epoch = stopper.best_epoch();
    let checkpoint = best.expect("at least one epoch sets a best");
    Ok((checkpoint, log))
}

/// Result of personalizing one subject.
#[derive(Debug, Clone)]
pub struct Personalized {
    pub checkpoint: ModelCheckpoint,
    pub log: TrainLog,
    /// Indices into the subject's sample list (finetune / val / test).
    pub split: crate::data::PersonalizationSplit,
}

/// Personalization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonalizeConfig {
    pub take_every: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PersonalizeConfig {
    fn default() -> Self {
        PersonalizeConfig {
            take_every: 10,
            epochs: 100,
            lr: 0.001,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// Fine-tunes all weights of a pretrained model on one subject's finetune
/// split for exactly `epochs` epochs (no early stopping), then returns the
/// parameters of the epoch with the highest validation accuracy.
pub fn personalize(
    pretrained: &ModelCheckpoint,
    subject_samples: &[&WindowSample],
    scheme: &SegmentationScheme,
    config: &PersonalizeConfig,
) -> Result<Personalized> {
    if pretrained.meta.scheme != scheme.name {
        return Err(Error::Shape(format!(
            "checkpoint was trained for scheme '{}', dataset uses '{}'",
            pretrained.meta.scheme, scheme.name
        )));
    }
    let task = Task::parse(&pretrained.meta.task)?;
    let owned: Vec<WindowSample> = subject_samples.iter().map(|s| (*s).clone()).collect();
    let split = personalization_split(&owned, config.take_every)?;

    let finetune: Vec<&WindowSample> = split.finetune.iter().map(|&i| subject_samples[i]).collect();
    let val: Vec<&WindowSample> = split.val.iter().map(|&i| subject_samples[i]).collect();

    let (mut model, _) = pretrained.restore()?;
    // Fine-tuning restarts the optimizer; the fine-tune set is tiny, so the
    // whole set forms one batch when it is smaller than the configured size.
    let batch_size = config.batch_size.min(finetune.len()).max(2);
    let mut adam = AdamState::new(&model.param_shapes(), AdamHyper::with_lr(config.lr));

    let mut log = TrainLog::default();
    let mut tracker = BestAccuracy::new();
    let mut best: Option<ModelCheckpoint> = None;

    for epoch in 0..config.epochs {
        let epoch_start = Instant::now();
        let batches = shuffled_batches(finetune.len(), batch_size, config.seed, epoch, false);
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for batch_idx in &batches {
            // Keep partial batches but never drop below the batchnorm minimum.
            if batch_idx.len() < 2 {
                continue;
            }
            let batch: Vec<&WindowSample> = batch_idx.iter().map(|&i| finetune[i]).collect();
            let loss = train_step(&mut model, &mut adam, &batch, scheme, task)?;
            loss_sum += loss * batch.len() as f64;
            count += batch.len();
        }
        let (val_loss, val_accuracy) =
            evaluate_loss_accuracy(&mut model, &val, scheme, task, batch_size)?;

        log.epochs.push(EpochRecord {
            epoch,
            train_loss: if count > 0 { loss_sum / count as f64 } else { f64::NAN },
            val_loss,
            val_accuracy,
            wall_s: epoch_start.elapsed().as_secs_f64(),
        });

        if tracker.observe(epoch, val_accuracy) {
            let meta = CheckpointMeta {
                seed: pretrained.meta.seed,
                epoch,
                best_val_metric: val_accuracy,
                task: pretrained.meta.task.clone(),
                scheme: pretrained.meta.scheme.clone(),
                adam_step: adam.step,
                adam_hyper: adam.hyper,
            };
            best = Some(ModelCheckpoint::capture(&mut model, &adam, meta));
        }
    }

    log.best_epoch = tracker.best_epoch();
    Ok(Personalized {
        checkpoint: best.expect("epochs >= 1 sets a best"),
        log,
        split,
    })
}

/// Seeded choice of `n` distinct personalization subjects from the test split.
pub fn select_personalization_subjects(
    test_subjects: &[u32],
    n: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    if test_subjects.len() < n {
        return Err(Error::Config(format!(
            "need {n} personalization subjects but the test split has {}",
            test_subjects.len()
        )));
    }
    let mut sorted = test_subjects.to_vec();
    sorted.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5E1E_C700));
    let mut chosen = rand::seq::index::sample(&mut rng, sorted.len(), n).into_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| sorted[i]).collect())
}
