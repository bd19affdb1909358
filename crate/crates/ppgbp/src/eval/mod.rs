//! Classification-style evaluation for both tasks: accuracy, confusion
//! matrices (rows = ground truth), regression-to-bin mapping, bin-distance
//! statistics, and report aggregation into summary tables.

mod report;

pub use report::{
    aggregate_report, aggregate_rows, reference_accuracy, write_personalization_csv, write_plot_spec,
    write_report_csv, write_summary, GroupStats, PersonalizationRow, RunRow, Summary,
    PERSONALIZATION_CSV_HEADER, REFERENCE_ARCHITECTURES, REFERENCE_FULL_SCALE, RUN_CSV_HEADER,
};

use crate::data::{SegmentationScheme, WindowSample};
use crate::error::{Error, Result};
use crate::nn::{ForwardCtx, Model, Tensor};

/// Builds the [batch, n_samp] input tensor for a slice of samples.
pub fn batch_tensor(samples: &[&WindowSample]) -> Result<Tensor<f32>> {
    let n_samp = samples
        .first()
        .map(|s| s.ppg.len())
        .ok_or_else(|| Error::Config("empty batch".into()))?;
    let mut data = Vec::with_capacity(samples.len() * n_samp);
    for s in samples {
        if s.ppg.len() != n_samp {
            return Err(Error::Shape(format!(
                "window length {} differs from batch length {n_samp}",
                s.ppg.len()
            )));
        }
        data.extend_from_slice(&s.ppg);
    }
    Tensor::from_vec(&[samples.len(), n_samp], data)
}

/// Raw head outputs for a sample set, evaluated in eval mode in batches.
pub fn model_outputs(
    model: &mut Model<f32>,
    samples: &[&WindowSample],
    batch_size: usize,
) -> Result<Vec<Vec<f32>>> {
    let mut outputs = Vec::with_capacity(samples.len());
    let ctx = ForwardCtx::eval();
    for chunk in samples.chunks(batch_size.max(1)) {
        let x = batch_tensor(chunk)?;
        let y = model.forward(&x, &ctx)?;
        for b in 0..chunk.len() {
            outputs.push(y.row2(b).to_vec());
        }
    }
    Ok(outputs)
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax_lowest(row: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted bin per sample: argmax over class outputs for classification
/// heads, interval lookup (with end-bin clamping) for regression heads.
pub fn predict_bins(
    model: &mut Model<f32>,
    samples: &[&WindowSample],
    scheme: &SegmentationScheme,
    batch_size: usize,
) -> Result<Vec<usize>> {
    let head_width = model.head_width();
    let classification = model.config.head.is_classification();
    if classification && head_width != scheme.n_bins() {
        return Err(Error::Shape(format!(
            "classification head width {head_width} does not match scheme '{}' with {} bins",
            scheme.name,
            scheme.n_bins()
        )));
    }
    let outputs = model_outputs(model, samples, batch_size)?;
    Ok(outputs
        .iter()
        .map(|row| {
            if classification {
                argmax_lowest(row)
            } else {
                scheme.assign_bin(row[0] as f64)
            }
        })
        .collect())
}

/// True bin labels from stored SBP values.
pub fn true_bins(samples: &[&WindowSample], scheme: &SegmentationScheme) -> Vec<usize> {
    samples
        .iter()
        .map(|s| scheme.assign_bin(s.sbp as f64))
        .collect()
}

/// Fraction of matching predictions.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Config(format!(
            "accuracy needs equal nonempty inputs, got {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let hits = pred.iter().zip(truth.iter()).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Raw and row-normalized confusion matrices, rows = ground truth. Rows with
/// no samples stay all-zero and are listed in the returned flag vector.
pub fn confusion_matrix(
    pred: &[usize],
    truth: &[usize],
    n_bins: usize,
) -> Result<(Vec<Vec<u64>>, Vec<Vec<f64>>, Vec<usize>)> {
    if pred.len() != truth.len() {
        return Err(Error::Config("prediction/truth length mismatch".into()));
    }
    let mut raw = vec![vec![0u64; n_bins]; n_bins];
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        if p >= n_bins || t >= n_bins {
            return Err(Error::Config(format!(
                "bin index out of range: pred {p}, true {t}, n_bins {n_bins}"
            )));
        }
        raw[t][p] += 1;
    }
    let mut normalized = vec![vec![0.0f64; n_bins]; n_bins];
    let mut zero_rows = Vec::new();
    for (t, row) in raw.iter().enumerate() {
        let total: u64 = row.iter().sum();
        if total == 0 {
            zero_rows.push(t);
        } else {
            for (p, &count) in row.iter().enumerate() {
                normalized[t][p] = count as f64 / total as f64;
            }
        }
    }
    Ok((raw, normalized, zero_rows))
}

pub fn mean_abs_bin_distance(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let total: u64 = pred
        .iter()
        .zip(truth.iter())
        .map(|(&p, &t)| p.abs_diff(t) as u64)
        .sum();
    total as f64 / pred.len() as f64
}

/// One evaluated run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scheme: String,
    pub architecture: String,
    pub task: String,
    pub split: String,
    pub n_samples: usize,
    pub accuracy: f64,
    pub mean_abs_bin_distance: f64,
    pub confusion_raw: Vec<Vec<u64>>,
    pub confusion_normalized: Vec<Vec<f64>>,
    pub zero_rows: Vec<usize>,
}

/// Evaluates a model on a sample set and assembles the report.
pub fn evaluate(
    model: &mut Model<f32>,
    samples: &[&WindowSample],
    scheme: &SegmentationScheme,
    split_name: &str,
    architecture: &str,
    task: &str,
    batch_size: usize,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Config("cannot evaluate an empty sample set".into()));
    }
    let pred = predict_bins(model, samples, scheme, batch_size)?;
    let truth = true_bins(samples, scheme);
    let acc = accuracy(&pred, &truth)?;
    let (raw, normalized, zero_rows) = confusion_matrix(&pred, &truth, scheme.n_bins())?;
    Ok(EvalReport {
        scheme: scheme.name.clone(),
        architecture: architecture.to_string(),
        task: task.to_string(),
        split: split_name.to_string(),
        n_samples: samples.len(),
        accuracy: acc,
        mean_abs_bin_distance: mean_abs_bin_distance(&pred, &truth),
        confusion_raw: raw,
        confusion_normalized: normalized,
        zero_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_lowest(&[0.1, 2.0, 0.3]), 1);
        assert_eq!(argmax_lowest(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(argmax_lowest(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn accuracy_basics() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0, 0, 0], &[0, 1, 2, 3]).unwrap(), 0.25);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn confusion_identity_and_offdiagonal() {
        let (raw, norm, zero) = confusion_matrix(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(raw[i][j], u64::from(i == j));
                assert_eq!(norm[i][j], f64::from(u8::from(i == j)));
            }
        }
        assert!(zero.is_empty());

        let (raw, norm, zero) = confusion_matrix(&[1, 1], &[0, 0], 2).unwrap();
        assert_eq!(raw[0][1], 2);
        assert_eq!(norm[0], vec![0.0, 1.0]);
        assert_eq!(zero, vec![1]);
        assert_eq!(norm[1], vec![0.0, 0.0]);
    }

    #[test]
    fn confusion_rejects_out_of_range() {
        assert!(confusion_matrix(&[3], &[0], 3).is_err());
    }

    #[test]
    fn bin_distance_of_identity_is_zero() {
        assert_eq!(mean_abs_bin_distance(&[0, 1, 2], &[0, 1, 2]), 0.0);
        assert_eq!(mean_abs_bin_distance(&[0, 3], &[2, 1]), 2.0);
    }

    proptest! {
        #[test]
        fn normalized_rows_sum_to_one_and_trace_is_accuracy(
            seed in 0u64..500,
            n in 1usize..400,
            n_bins in 2usize..11,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n_bins)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n_bins)).collect();
            let (raw, norm, zero_rows) = confusion_matrix(&pred, &truth, n_bins).unwrap();
            for (t, row) in norm.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if zero_rows.contains(&t) {
                    prop_assert_eq!(sum, 0.0);
                } else {
                    prop_assert!((sum - 1.0).abs() < 1e-6);
                }
            }
            let trace: u64 = (0..n_bins).map(|i| raw[i][i]).sum();
            let total: u64 = raw.iter().flatten().sum();
            let acc = accuracy(&pred, &truth).unwrap();
            prop_assert!((trace as f64 / total as f64 - acc).abs() < 1e-12);
        }

        #[test]
        fn regression_bin_mapping_matches_brute_force(
            value in -50.0f64..300.0,
            scheme_idx in 0usize..4,
        ) {
            let name = ["hph", "even4", "dgk", "even10"][scheme_idx];
            let scheme = SegmentationScheme::named(name).unwrap();
            let fast = scheme.assign_bin(value);
            // Brute-force interval scan with explicit clamping.
            let mut slow = scheme.n_bins() - 1;
            if value < scheme.edges[0] {
                slow = 0;
            } else {
                for i in 0..scheme.n_bins() {
                    let last = i == scheme.n_bins() - 1;
                    if value >= scheme.edges[i] && (value < scheme.edges[i + 1] || last) {
                        slow = i;
                        break;
                    }
                }
            }
            prop_assert_eq!(fast, slow);
        }
    }
}
