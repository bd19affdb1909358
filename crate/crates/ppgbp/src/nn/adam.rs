//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use crate::nn::tensor::{scalar, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            ..Default::default()
        }
    }
}

/// One bias-corrected Adam update over a parameter slice. `step` is the
/// 1-based step count after this update.
pub fn adam_step_slice<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    hyper: &AdamHyper,
) {
    debug_assert_eq!(params.len(), grads.len());
    let b1: T = scalar(hyper.beta1);
    let b2: T = scalar(hyper.beta2);
    let one_minus_b1: T = scalar(1.0 - hyper.beta1);
    let one_minus_b2: T = scalar(1.0 - hyper.beta2);
    let corr1: T = scalar(1.0 - hyper.beta1.powi(step as i32));
    let corr2: T = scalar(1.0 - hyper.beta2.powi(step as i32));
    let lr: T = scalar(hyper.lr);
    let eps: T = scalar(hyper.eps);

    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + one_minus_b1 * g;
        v[i] = b2 * v[i] + one_minus_b2 * g * g;
        let m_hat = m[i] / corr1;
        let v_hat = v[i] / corr2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Per-tensor first/second moment state plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state shaped like the given parameter tensors.
    pub fn new(param_shapes: &[Vec<usize>], hyper: AdamHyper) -> Self {
        AdamState {
            m: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            step: 0,
            hyper,
        }
    }

    /// Applies one update across all parameter tensors, visited in order.
    /// `visit` must yield (param, grad) pairs in the same order every call.
    pub fn step_with(&mut self, mut visit: impl FnMut(&mut dyn FnMut(&mut Tensor<T>, &mut Tensor<T>))) {
        self.step += 1;
        let step = self.step;
        let hyper = self.hyper;
        let mut idx = 0usize;
        let m = &mut self.m;
        let v = &mut self.v;
        visit(&mut |param, grad| {
            adam_step_slice(
                param.data_mut(),
                grad.data(),
                m[idx].data_mut(),
                v[idx].data_mut(),
                step,
                &hyper,
            );
            idx += 1;
        });
        debug_assert_eq!(idx, m.len(), "parameter visit order changed");
    }
}
