//! Losses: softmax cross-entropy for bin classification, mean squared error
//! on raw mmHg for regression. Both return the batch-mean loss and the
//! gradient with respect to the network output.

use crate::error::{Error, Result};
use crate::nn::tensor::{scalar, Scalar, Tensor};

/// Row-wise softmax with max subtraction.
pub fn softmax_probs<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 2 {
        return Err(Error::Shape(format!(
            "softmax expects [batch, classes], got {:?}",
            logits.shape()
        )));
    }
    let mut probs = logits.clone();
    let classes = logits.dim(1);
    for b in 0..logits.dim(0) {
        let row = probs.row2_mut(b);
        let mut max = row[0];
        for &v in row.iter().skip(1) {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
        let _ = classes;
    }
    Ok(probs)
}

/// Mean softmax cross-entropy over the batch; gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>)> {
    if logits.dim(0) != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows vs {} labels",
            logits.dim(0),
            labels.len()
        )));
    }
    let classes = logits.dim(1);
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Config(format!(
                "label {label} out of range for {classes} classes (row {b})"
            )));
        }
    }

    let batch = logits.dim(0);
    let mut grad = softmax_probs(logits)?;
    let mut loss = 0.0f64;
    let inv_batch: T = scalar(1.0 / batch as f64);
    for (b, &label) in labels.iter().enumerate() {
        let row = grad.row2_mut(b);
        let p = row[label].to_f64().unwrap().max(f64::MIN_POSITIVE);
        loss -= p.ln();
        row[label] = row[label] - T::one();
        for v in row.iter_mut() {
            *v = *v * inv_batch;
        }
    }
    Ok((loss / batch as f64, grad))
}

/// Mean squared error against per-sample scalar targets; gradient w.r.t. the
/// predictions (shape [batch, 1] or [batch]).
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, targets: &[f64]) -> Result<(f64, Tensor<T>)> {
    let batch = pred.dim(0);
    let width: usize = pred.shape()[1..].iter().product::<usize>().max(1);
    if width != 1 || batch != targets.len() {
        return Err(Error::Shape(format!(
            "mse expects [batch, 1] predictions matching {} targets, got {:?}",
            targets.len(),
            pred.shape()
        )));
    }
    let mut grad = pred.clone();
    let mut loss = 0.0f64;
    let scale: T = scalar(2.0 / batch as f64);
    for (b, g) in grad.data_mut().iter_mut().enumerate() {
        let diff = g.to_f64().unwrap() - targets[b];
        loss += diff * diff;
        *g = scalar::<T>(diff) * scale;
    }
    Ok((loss / batch as f64, grad))
}
