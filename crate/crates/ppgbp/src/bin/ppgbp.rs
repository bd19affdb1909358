//! Command-line surface wiring the pipeline into reproducible experiments.
//!
//! Every subcommand is a thin wrapper over library calls. Exit codes:
//! 1 configuration, 2 data format/structure, 3 numerical divergence, 4 I/O.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use ppgbp::data::{
    load_dataset, read_corpus_dir, read_record, save_dataset, write_record, write_store,
    SegmentationScheme, Split,
};
use ppgbp::dsp::GateThresholds;
use ppgbp::error::{Error, Result};
use ppgbp::eval::{
    aggregate_rows, evaluate, write_personalization_csv, write_plot_spec, write_report_csv,
    write_summary, PersonalizationRow, RunRow, PERSONALIZATION_CSV_HEADER, RUN_CSV_HEADER,
};
use ppgbp::experiment::{resolve_seed, ExperimentConfig, ResolvedExperiment};
use ppgbp::nn::ModelCheckpoint;
use ppgbp::pipeline::{build_dataset, preprocess_corpus, DatasetConfig, PreprocessConfig};
use ppgbp::synth::{duration_for_target, generate_subject, SynthConfig};
use ppgbp::train::{
    personalize, pretrain, select_personalization_subjects, PersonalizeConfig, Task,
};

#[derive(Parser)]
#[command(name = "ppgbp", about = "PPG blood-pressure interval benchmark pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic subject corpus (one .ppgr file per subject).
    Synth(SynthArgs),
    /// Preprocess raw records into a window-sample store.
    Preprocess(PreprocessArgs),
    /// Build a balanced, subject-disjoint dataset from preprocessed samples.
    BuildDataset(BuildDatasetArgs),
    /// Pretrain a model on a balanced dataset.
    Train(TrainArgs),
    /// Fine-tune a pretrained model on individual test subjects.
    Personalize(PersonalizeArgs),
    /// Evaluate a checkpoint on a dataset split.
    Evaluate(EvaluateArgs),
    /// Aggregate run and personalization CSVs into a summary.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    subjects: usize,
    #[arg(long, default_value = "even4")]
    scheme: String,
    /// Record duration per subject in seconds; sized from the windows-per-bin
    /// target when omitted.
    #[arg(long)]
    duration: Option<f64>,
    /// Valid-window target per bin used to size the default duration.
    #[arg(long, default_value_t = 80)]
    windows_per_bin: usize,
    #[arg(long, default_value_t = 125.0)]
    fs: f64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Directory of .ppgr files (or a single record file).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 125.0)]
    fs: f64,
    #[arg(long = "snr-min", default_value_t = -7.0, allow_hyphen_values = true)]
    snr_min: f64,
    /// SBP acceptance range as "lo:hi" in mmHg.
    #[arg(long = "sbp-range", default_value = "80:180")]
    sbp_range: String,
    /// Heart-rate acceptance range as "lo:hi" in bpm.
    #[arg(long = "hr-range", default_value = "50:140")]
    hr_range: String,
    #[arg(long, default_value_t = 5.0)]
    window: f64,
    #[arg(long, default_value_t = 2.5)]
    overlap: f64,
    /// Bandpass as "f_low:f_high" in Hz.
    #[arg(long, default_value = "0.5:8")]
    band: String,
    #[arg(long, default_value_t = 4)]
    order: usize,
}

#[derive(Args)]
struct BuildDatasetArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    scheme: String,
    #[arg(long, default_value_t = 1000)]
    quota: usize,
    #[arg(long = "min-windows", default_value_t = 1000)]
    min_windows: usize,
    /// Subject split fractions as "train:val:test".
    #[arg(long, default_value = "0.70:0.225:0.075")]
    split: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long = "max-epochs")]
    max_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Optional TOML experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PersonalizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Number of test-split subjects to personalize.
    #[arg(long, default_value_t = 10)]
    subjects: usize,
    #[arg(long = "take-every", default_value_t = 10)]
    take_every: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Output CSV: the accuracy row plus confusion blocks.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory scanned recursively for run and personalization CSVs.
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Preprocess(args) => run_preprocess(args),
        Command::BuildDataset(args) => run_build_dataset(args),
        Command::Train(args) => run_train(args),
        Command::Personalize(args) => run_personalize(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Report(args) => run_report(args),
    };
    if let Err(err) = result {
        let category = match err.exit_code() {
            1 => "configuration",
            2 => "data-format",
            3 => "divergence",
            _ => "io",
        };
        eprintln!("error[{category}]: {err}");
        std::process::exit(err.exit_code());
    }
}

fn parse_pair(text: &str, what: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!(
            "{what} must be \"lo:hi\", got '{text}'"
        )));
    }
    let lo = parts[0]
        .parse()
        .map_err(|e| Error::Config(format!("bad {what} low value: {e}")))?;
    let hi = parts[1]
        .parse()
        .map_err(|e| Error::Config(format!("bad {what} high value: {e}")))?;
    Ok((lo, hi))
}

fn parse_split(text: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "split must be \"train:val:test\" (three fractions), got '{text}'"
        )));
    }
    let mut values = [0.0; 3];
    for (v, p) in values.iter_mut().zip(parts.iter()) {
        *v = p
            .parse()
            .map_err(|e| Error::Config(format!("bad split fraction '{p}': {e}")))?;
    }
    Ok((values[0], values[1], values[2]))
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let seed = resolve_seed(args.seed, None)?;
    let scheme = SegmentationScheme::named(&args.scheme)?;
    let config = SynthConfig {
        fs: args.fs,
        noise_level: args.noise,
        ..Default::default()
    };
    let duration = match args.duration {
        Some(d) => d,
        None => duration_for_target(&config, &scheme, args.windows_per_bin, 5.0, 2.5),
    };
    std::fs::create_dir_all(&args.out)?;
    for id in 0..args.subjects as u32 {
        let record = generate_subject(&config, seed, id, duration);
        write_record(&args.out.join(format!("subject_{id:04}.ppgr")), &record)?;
    }
    println!(
        "wrote {} subjects of {duration:.0} s at {} Hz (seed {seed}) to {}",
        args.subjects,
        args.fs,
        args.out.display()
    );
    Ok(())
}

fn run_preprocess(args: PreprocessArgs) -> Result<()> {
    let (f_low, f_high) = parse_pair(&args.band, "band")?;
    let (sbp_min, sbp_max) = parse_pair(&args.sbp_range, "sbp-range")?;
    let (hr_min, hr_max) = parse_pair(&args.hr_range, "hr-range")?;
    let config = PreprocessConfig {
        fs: args.fs,
        filter_order: args.order,
        f_low,
        f_high,
        window_s: args.window,
        overlap_s: args.overlap,
        thresholds: GateThresholds {
            snr_min_db: args.snr_min,
            sbp_min,
            sbp_max,
            hr_min,
            hr_max,
        },
    };
    config.filter_spec().validate()?;

    let records = if args.input.is_dir() {
        read_corpus_dir(&args.input)?
    } else {
        vec![read_record(&args.input)?]
    };
    if records.is_empty() {
        return Err(Error::Config(format!(
            "no .ppgr records found in {}",
            args.input.display()
        )));
    }
    let (samples, stats) = preprocess_corpus(&records, &config)?;
    write_store(&args.out, &samples)?;
    println!(
        "{} windows, {} accepted, rejected: {:?}",
        stats.windows_total, stats.accepted, stats.rejected
    );
    println!("store written to {}", args.out.display());
    Ok(())
}

fn run_build_dataset(args: BuildDatasetArgs) -> Result<()> {
    let seed = resolve_seed(args.seed, None)?;
    let scheme = SegmentationScheme::named(&args.scheme)?;
    let fractions = parse_split(&args.split)?;
    let samples = ppgbp::data::read_store(&args.input)?;
    let config = DatasetConfig {
        scheme,
        per_bin_quota: args.quota,
        min_windows: args.min_windows,
        split_fractions: fractions,
        seed,
    };
    let dataset = build_dataset(&samples, &config)?;
    save_dataset(&args.out, &dataset, args.min_windows, seed, fractions)?;
    println!(
        "balanced dataset: {} subjects x {} bins x {} = {} samples -> {}",
        dataset.split_assignment.len(),
        dataset.scheme.n_bins(),
        dataset.per_bin_quota,
        dataset.samples.len(),
        args.out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let file_config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let dataset_path = args
        .dataset
        .or(file_config.dataset)
        .ok_or_else(|| Error::Config("--dataset is required (flag or config file)".into()))?;
    let seed = resolve_seed(args.seed, file_config.seed)?;
    let dataset = load_dataset(&dataset_path)?;

    let resolved = ResolvedExperiment {
        dataset: dataset_path.clone(),
        architecture: args
            .arch
            .or(file_config.architecture)
            .unwrap_or_else(|| "resnet18".into()),
        task: args
            .task
            .or(file_config.task)
            .unwrap_or_else(|| "classification".into()),
        profile: args
            .profile
            .or(file_config.profile)
            .unwrap_or_else(|| "desk".into()),
        scheme: dataset.scheme.name.clone(),
        lr: args.lr.or(file_config.lr).unwrap_or(0.001),
        batch_size: args.batch_size.or(file_config.batch_size).unwrap_or(128),
        patience: args.patience.or(file_config.patience).unwrap_or(10),
        max_epochs: args.max_epochs.or(file_config.max_epochs).unwrap_or(200),
        seed,
    };
    let train_config = resolved.to_train_config()?;

    std::fs::create_dir_all(&args.out)?;
    resolved.echo(&args.out)?;
    let (checkpoint, log) = pretrain(&dataset, &train_config)?;
    checkpoint.save(&args.out.join("checkpoint.ppgm"))?;
    log.write_csv(&args.out.join("train_log.csv"))?;
    println!(
        "trained {} {} on '{}': best epoch {} (val loss {:.4}), {} epochs run",
        resolved.architecture,
        resolved.task,
        resolved.scheme,
        checkpoint.meta.epoch,
        checkpoint.meta.best_val_metric,
        log.epochs.len()
    );
    println!("checkpoint: {}", args.out.join("checkpoint.ppgm").display());
    Ok(())
}

fn run_personalize(args: PersonalizeArgs) -> Result<()> {
    let seed = resolve_seed(args.seed, None)?;
    let dataset = load_dataset(&args.dataset)?;
    let pretrained = ModelCheckpoint::load(&args.checkpoint)?;
    let task = Task::parse(&pretrained.meta.task)?;
    let scheme = &dataset.scheme;
    if pretrained.meta.scheme != scheme.name {
        return Err(Error::Shape(format!(
            "checkpoint scheme '{}' does not match dataset scheme '{}'",
            pretrained.meta.scheme, scheme.name
        )));
    }

    let test_subjects: Vec<u32> = dataset
        .split_assignment
        .iter()
        .filter(|(_, s)| **s == Split::Test)
        .map(|(&id, _)| id)
        .collect();
    let chosen = select_personalization_subjects(&test_subjects, args.subjects, seed)?;

    std::fs::create_dir_all(&args.out)?;
    let config = PersonalizeConfig {
        take_every: args.take_every,
        epochs: args.epochs,
        lr: args.lr.unwrap_or(0.001),
        batch_size: 128,
        seed,
    };

    // Pre-personalization accuracy on the original test split is shared by
    // every row.
    let test_samples = dataset.split_samples(Split::Test);
    let (mut pre_model, _) = pretrained.restore()?;
    let orig_pre = evaluate(
        &mut pre_model,
        &test_samples,
        scheme,
        "test",
        &pretrained.architecture.name,
        task.as_str(),
        config.batch_size,
    )?
    .accuracy;

    let mut rows = Vec::new();
    for subject in &chosen {
        let subject_samples = dataset.subject_samples(*subject);
        let outcome = personalize(&pretrained, &subject_samples, scheme, &config)?;

        let subject_test: Vec<&ppgbp::data::WindowSample> = outcome
            .split
            .test
            .iter()
            .map(|&i| subject_samples[i])
            .collect();
        let (mut pre_model, _) = pretrained.restore()?;
        let pre = evaluate(
            &mut pre_model,
            &subject_test,
            scheme,
            "personal_test",
            &pretrained.architecture.name,
            task.as_str(),
            config.batch_size,
        )?
        .accuracy;
        let (mut post_model, _) = outcome.checkpoint.restore()?;
        let post = evaluate(
            &mut post_model,
            &subject_test,
            scheme,
            "personal_test",
            &pretrained.architecture.name,
            task.as_str(),
            config.batch_size,
        )?
        .accuracy;
        let orig_post = evaluate(
            &mut post_model,
            &test_samples,
            scheme,
            "test",
            &pretrained.architecture.name,
            task.as_str(),
            config.batch_size,
        )?
        .accuracy;

        outcome
            .checkpoint
            .save(&args.out.join(format!("subject_{subject:04}.ppgm")))?;
        outcome
            .log
            .write_csv(&args.out.join(format!("subject_{subject:04}_log.csv")))?;
        println!("subject {subject}: pre {pre:.3} -> post {post:.3}");
        rows.push(PersonalizationRow {
            subject_id: *subject,
            scheme: scheme.name.clone(),
            architecture: pretrained.architecture.name.clone(),
            task: task.as_str().to_string(),
            pre_accuracy: pre,
            post_accuracy: post,
            orig_test_pre_accuracy: orig_pre,
            orig_test_post_accuracy: orig_post,
        });
    }
    write_personalization_csv(&args.out.join("personalization.csv"), &rows)?;
    println!(
        "personalization results: {}",
        args.out.join("personalization.csv").display()
    );
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let dataset = load_dataset(&args.dataset)?;
    let checkpoint = ModelCheckpoint::load(&args.checkpoint)?;
    let task = Task::parse(&checkpoint.meta.task)?;
    if checkpoint.meta.scheme != dataset.scheme.name {
        return Err(Error::Shape(format!(
            "checkpoint scheme '{}' does not match dataset scheme '{}'",
            checkpoint.meta.scheme, dataset.scheme.name
        )));
    }
    let split = Split::parse(&args.split)?;
    let samples = dataset.split_samples(split);
    if samples.is_empty() {
        return Err(Error::Config(format!(
            "split '{}' has no samples",
            args.split
        )));
    }
    let (mut model, _) = checkpoint.restore()?;
    let report = evaluate(
        &mut model,
        &samples,
        &dataset.scheme,
        split.as_str(),
        &checkpoint.architecture.name,
        task.as_str(),
        128,
    )?;
    let run_id = format!(
        "{}-{}-{}-{}",
        report.scheme, report.architecture, report.task, report.split
    );
    write_report_csv(&args.report, &report, &run_id)?;
    println!(
        "{} samples, accuracy {:.4}, mean |bin error| {:.3} -> {}",
        report.n_samples,
        report.accuracy,
        report.mean_abs_bin_distance,
        args.report.display()
    );
    Ok(())
}

fn collect_csv_files(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_csv_files(&path, found)?;
        } else if path.extension().map(|e| e == "csv").unwrap_or(false) {
            found.push(path);
        }
    }
    Ok(())
}

fn run_report(args: ReportArgs) -> Result<()> {
    let mut files = Vec::new();
    collect_csv_files(&args.runs, &mut files)?;
    files.sort();

    let mut runs: Vec<RunRow> = Vec::new();
    let mut perso: Vec<PersonalizationRow> = Vec::new();
    for file in &files {
        let text = std::fs::read_to_string(file)?;
        let mut lines = text.lines();
        match lines.next() {
            Some(RUN_CSV_HEADER) => {
                for line in lines.take_while(|l| !l.starts_with('#')) {
                    runs.push(RunRow::parse_csv(line)?);
                }
            }
            Some(PERSONALIZATION_CSV_HEADER) => {
                for line in lines.take_while(|l| !l.starts_with('#')) {
                    perso.push(PersonalizationRow::parse_csv(line)?);
                }
            }
            _ => {} // unrelated csv
        }
    }
    // Deduplicate identical rows picked up from overlapping directories.
    let mut seen = std::collections::BTreeSet::new();
    runs.retain(|r| seen.insert(format!("{r:?}")));
    let mut seen = std::collections::BTreeSet::new();
    perso.retain(|r| seen.insert(format!("{r:?}")));

    let summary = aggregate_rows(&runs, &perso)?;
    write_summary(&args.out, &summary)?;
    let plot_path = args.out.with_extension("plots.json");
    write_plot_spec(&plot_path, &summary)?;
    println!(
        "{} run rows, {} personalization rows -> {} (+ {})",
        summary.runs.len(),
        summary.personalization.len(),
        args.out.display(),
        plot_path.display()
    );

    Ok(())
}
