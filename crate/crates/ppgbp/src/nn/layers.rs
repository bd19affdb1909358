//! Layer forward/backward implementations.
//!
//! Every layer caches what its backward pass needs during forward; backward
//! overwrites the stored parameter gradients (one backward per step). All
//! reductions run in a fixed element order, and parallelism only ever splits
//! work across disjoint output regions, so results are bit-identical for any
//! thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::init::glorot_with_rng;
use crate::nn::tensor::{scalar, Scalar, Tensor};

/// Whether a forward pass is a training or an evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward context: mode plus the global optimizer step, which seeds
/// dropout masks so a resumed run draws identical masks.
#[derive(Debug, Clone, Copy)]
pub struct ForwardCtx {
    pub mode: Mode,
    pub step: u64,
}

impl ForwardCtx {
    pub fn train(step: u64) -> Self {
        ForwardCtx {
            mode: Mode::Train,
            step,
        }
    }

    pub fn eval() -> Self {
        ForwardCtx {
            mode: Mode::Eval,
            step: 0,
        }
    }
}

/// Zero padding strategy for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Symmetric zero padding of (kernel - 1) / 2 on each side.
    Same,
    Valid,
}

pub trait Layer<T: Scalar>: Send {
    fn forward(&mut self, x: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>>;
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;
    /// Trainable parameters paired with their gradients, declaration order.
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Tensor<T>, &mut Tensor<T>)) {
        let _ = f;
    }
    /// Non-trainable state (running statistics), declaration order.
    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Tensor<T>)) {
        let _ = f;
    }
    fn name(&self) -> &'static str;
}

fn backward_before_forward(layer: &'static str) -> Error {
    Error::Shape(format!("{layer}: backward called before forward"))
}

/// Dot product with a fixed four-lane accumulation order. The lane split is
/// part of the definition (not thread- or length-dependent), so results are
/// reproducible while the independent lanes vectorize.
#[inline]
fn dot4<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] = acc[0] + a[j] * b[j];
        acc[1] = acc[1] + a[j + 1] * b[j + 1];
        acc[2] = acc[2] + a[j + 2] * b[j + 2];
        acc[3] = acc[3] + a[j + 3] * b[j + 3];
    }
    let mut tail = T::zero();
    for j in chunks * 4..a.len() {
        tail = tail + a[j] * b[j];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail
}

// ---------------------------------------------------------------------------
// Conv1d
// ---------------------------------------------------------------------------

pub struct Conv1d<T: Scalar> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    grad_weight: Tensor<T>,
    grad_bias: Tensor<T>,
    cached_padded: Option<Tensor<T>>,
    cached_in_len: usize,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel;
        let fan_out = out_channels * kernel;
        Conv1d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: glorot_with_rng(&[out_channels, in_channels, kernel], fan_in, fan_out, rng),
            bias: Tensor::zeros(&[out_channels]),
            grad_weight: Tensor::zeros(&[out_channels, in_channels, kernel]),
            grad_bias: Tensor::zeros(&[out_channels]),
            cached_padded: None,
            cached_in_len: 0,
        }
    }

    fn pad(&self) -> usize {
        match self.padding {
            Padding::Same => (self.kernel - 1) / 2,
            Padding::Valid => 0,
        }
    }

    pub fn out_len(&self, in_len: usize) -> Result<usize> {
        let padded = in_len + 2 * self.pad();
        if padded < self.kernel {
            return Err(Error::Shape(format!(
                "conv1d: input length {in_len} too short for kernel {}",
                self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }
}

impl<T: Scalar> Layer<T> for Conv1d<T> {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &ForwardCtx) -> Result<Tensor<T>> {
        if x.rank() != 3 || x.dim(1) != self.in_channels {
            return Err(Error::Shape(format!(
                "conv1d expects [batch, {}, len], got {:?}",
                self.in_channels,
                x.shape()
            )));
        }
        let (batch, in_len) = (x.dim(0), x.dim(2));
        let pad = self.pad();
        let out_len = self.out_len(in_len)?;
        let padded_len = in_len + 2 * pad;

        let mut xp = Tensor::zeros(&[batch, self.in_channels, padded_len]);
        for b in 0..batch {
            for c in 0..self.in_channels {
                xp.row3_mut(b, c)[pad..pad + in_len].copy_from_slice(x.row3(b, c));
            }
        }

        let mut y = Tensor::zeros(&[batch, self.out_channels, out_len]);
        let out_ch = self.out_channels;
        let in_ch = self.in_channels;
        let kernel = self.kernel;
        let stride = self.stride;
        let weight = &self.weight;
        let bias = &self.bias;
        let xp_ref = &xp;
        // One task per batch element; output channels are register-blocked in
        // fours so each input load feeds four accumulations.
        y.data_mut()
            .par_chunks_mut(out_ch * out_len)
            .enumerate()
            .for_each(|(b, y_batch)| {
                for (oc, y_row) in y_batch.chunks_mut(out_len).enumerate() {
                    y_row.fill(bias.data()[oc]);
                }
                let mut oc = 0;
                while oc + 4 <= out_ch {
                    let (rows01, rows23) = y_batch[oc * out_len..].split_at_mut(2 * out_len);
                    let (y0, y1) = rows01.split_at_mut(out_len);
                    let (y2, y3) = rows23[..2 * out_len].split_at_mut(out_len);
                    for ic in 0..in_ch {
                        let x_row = xp_ref.row3(b, ic);
                        for k in 0..kernel {
                            let wbase = (oc * in_ch + ic) * kernel + k;
                            let w0 = weight.data()[wbase];
                            let w1 = weight.data()[wbase + in_ch * kernel];
                            let w2 = weight.data()[wbase + 2 * in_ch * kernel];
                            let w3 = weight.data()[wbase + 3 * in_ch * kernel];
                            if stride == 1 {
                                let xs = &x_row[k..k + out_len];
                                let rows = y0.iter_mut().zip(y1.iter_mut()).zip(y2.iter_mut().zip(y3.iter_mut()));
                                for (((v0, v1), (v2, v3)), &xv) in rows.zip(xs.iter()) {
                                    *v0 = *v0 + w0 * xv;
                                    *v1 = *v1 + w1 * xv;
                                    *v2 = *v2 + w2 * xv;
                                    *v3 = *v3 + w3 * xv;
                                }
                            } else {
                                for t in 0..out_len {
                                    let xv = x_row[t * stride + k];
                                    y0[t] = y0[t] + w0 * xv;
                                    y1[t] = y1[t] + w1 * xv;
                                    y2[t] = y2[t] + w2 * xv;
                                    y3[t] = y3[t] + w3 * xv;
                                }
                            }
                        }
                    }
                    oc += 4;
                }
                for oc in oc..out_ch {
                    let y_row = &mut y_batch[oc * out_len..(oc + 1) * out_len];
                    for ic in 0..in_ch {
                        let x_row = xp_ref.row3(b, ic);
                        for k in 0..kernel {
                            let w = weight.data()[(oc * in_ch + ic) * kernel + k];
                            if stride == 1 {
                                for (yv, &xv) in y_row.iter_mut().zip(&x_row[k..k + out_len]) {
                                    *yv = *yv + w * xv;
                                }
                            } else {
                                for (t, yv) in y_row.iter_mut().enumerate() {
                                    *yv = *yv + w * x_row[t * stride + k];
                                }
                            }
                        }
                    }
                }
            });

        self.cached_padded = Some(xp);
        self.cached_in_len = in_len;
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let xp = self
            .cached_padded
            .as_ref()
            .ok_or_else(|| backward_before_forward("conv1d"))?;
        let (batch, out_len) = (grad_out.dim(0), grad_out.dim(2));
        let pad = self.pad();
        let in_len = self.cached_in_len;
        let padded_len = in_len + 2 * pad;
        let in_ch = self.in_channels;
        let out_ch = self.out_channels;
        let kernel = self.kernel;
        let stride = self.stride;

        // Bias and weight gradients, parallel over output channels.
        let weight = &self.weight;
        self.grad_bias
            .data_mut()
            .par_iter_mut()
            .enumerate()
            .for_each(|(oc, gb)| {
                let mut acc = T::zero();
                for b in 0..batch {
                    for &g in grad_out.row3(b, oc) {
                        acc = acc + g;
                    }
                }
                *gb = acc;
            });
        self.grad_weight
            .data_mut()
            .par_chunks_mut(in_ch * kernel)
            .enumerate()
            .for_each(|(oc, gw_row)| {
                gw_row.fill(T::zero());
                for b in 0..batch {
                    let gy = grad_out.row3(b, oc);
                    for ic in 0..in_ch {
                        let x_row = xp.row3(b, ic);
                        for k in 0..kernel {
                            let acc = if stride == 1 {
                                dot4(gy, &x_row[k..k + out_len])
                            } else {
                                let mut acc = T::zero();
                                for (t, &g) in gy.iter().enumerate() {
                                    acc = acc + g * x_row[t * stride + k];
                                }
                                acc
                            };
                            gw_row[ic * kernel + k] = gw_row[ic * kernel + k] + acc;
                        }
                    }
                }
            });

        // Input gradient, parallel over batch elements.
        let mut gxp = Tensor::zeros(&[batch, in_ch, padded_len]);
        gxp.data_mut()
            .par_chunks_mut(in_ch * padded_len)
            .enumerate()
            .for_each(|(b, gx_batch)| {
                let mut oc = 0;
                while oc + 4 <= out_ch {
                    let g0 = grad_out.row3(b, oc);
                    let g1 = grad_out.row3(b, oc + 1);
                    let g2 = grad_out.row3(b, oc + 2);
                    let g3 = grad_out.row3(b, oc + 3);
                    for ic in 0..in_ch {
                        let gx_row = &mut gx_batch[ic * padded_len..(ic + 1) * padded_len];
                        for k in 0..kernel {
                            let wbase = (oc * in_ch + ic) * kernel + k;
                            let w0 = weight.data()[wbase];
                            let w1 = weight.data()[wbase + in_ch * kernel];
                            let w2 = weight.data()[wbase + 2 * in_ch * kernel];
                            let w3 = weight.data()[wbase + 3 * in_ch * kernel];
                            if stride == 1 {
                                let gx_seg = &mut gx_row[k..k + out_len];
                                let grads = g0.iter().zip(g1.iter()).zip(g2.iter().zip(g3.iter()));
                                for (gx, ((&a0, &a1), (&a2, &a3))) in gx_seg.iter_mut().zip(grads)
                                {
                                    *gx = *gx + (w0 * a0 + w1 * a1 + w2 * a2 + w3 * a3);
                                }
                            } else {
                                for t in 0..out_len {
                                    let i = t * stride + k;
                                    gx_row[i] = gx_row[i]
                                        + (w0 * g0[t] + w1 * g1[t] + w2 * g2[t] + w3 * g3[t]);
                                }
                            }
                        }
                    }
                    oc += 4;
                }
                for oc in oc..out_ch {
                    let gy = grad_out.row3(b, oc);
                    for ic in 0..in_ch {
                        let gx_row = &mut gx_batch[ic * padded_len..(ic + 1) * padded_len];
                        for k in 0..kernel {
                            let w = weight.data()[(oc * in_ch + ic) * kernel + k];
                            if stride == 1 {
                                for (gx, &g) in gx_row[k..k + out_len].iter_mut().zip(gy.iter()) {
                                    *gx = *gx + w * g;
                                }
                            } else {
                                for (t, &g) in gy.iter().enumerate() {
                                    let i = t * stride + k;
                                    gx_row[i] = gx_row[i] + w * g;
                                }
                            }
                        }
                    }
                }
            });

        let mut gx = Tensor::zeros(&[batch, in_ch, in_len]);
        for b in 0..batch {
            for c in 0..in_ch {
                gx.row3_mut(b, c)
                    .copy_from_slice(&gxp.row3(b, c)[pad..pad + in_len]);
            }
        }
        let _ = out_len;
        Ok(gx)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Tensor<T>, &mut Tensor<T>)) {
        f(&mut self.weight, &mut self.grad_weight);
        f(&mut self.bias, &mut self.grad_bias);
    }

    fn name(&self) -> &'static str {
        "conv1d"
    }
}

// ---------------------------------------------------------------------------
// BatchNorm1d
// ---------------------------------------------------------------------------

pub const BATCHNORM_MOMENTUM: f64 = 0.9;
pub const BATCHNORM_EPS: f64 = 1e-5;

pub struct BatchNorm1d<T: Scalar> {
    pub channels: usize,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    grad_gamma: Tensor<T>,
    grad_beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    cached_xhat: Option<Tensor<T>>,
    cached_inv_std: Vec<T>,
    cached_train: bool,
}

impl<T: Scalar> BatchNorm1d<T> {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Tensor::zeros(&[channels]);
        gamma.data_mut().fill(T::one());
        let mut running_var = Tensor::zeros(&[channels]);
        running_var.data_mut().fill(T::one());
        BatchNorm1d {
            channels,
            gamma,
            beta: Tensor::zeros(&[channels]),
            grad_gamma: Tensor::zeros(&[channels]),
            grad_beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var,
            cached_xhat: None,
            cached_inv_std: Vec::new(),
            cached_train: false,
        }
    }
}

impl<T: Scalar> Layer<T> for BatchNorm1d<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        if x.rank() != 3 || x.dim(1) != self.channels {
            return Err(Error::Shape(format!(
                "batchnorm expects [batch, {}, len], got {:?}",
                self.channels,
                x.shape()
            )));
        }
        let (batch, len) = (x.dim(0), x.dim(2));
        let train = ctx.mode == Mode::Train;
        if train && batch < 2 {
            return Err(Error::Shape(
                "batchnorm requires batch size >= 2 in train mode".into(),
            ));
        }

        let n = (batch * len) as f64;
        let mut mean = vec![T::zero(); self.channels];
        let mut var = vec![T::zero(); self.channels];
        if train {
            for c in 0..self.channels {
                let mut acc = 0.0f64;
                for b in 0..batch {
                    for &v in x.row3(b, c) {
                        acc += v.to_f64().unwrap();
                    }
                }
                let m = acc / n;
                let mut acc2 = 0.0f64;
                for b in 0..batch {
                    for &v in x.row3(b, c) {
                        let d = v.to_f64().unwrap() - m;
                        acc2 += d * d;
                    }
                }
                mean[c] = scalar(m);
                var[c] = scalar(acc2 / n);
            }
            let momentum: T = scalar(BATCHNORM_MOMENTUM);
            let one_minus: T = scalar(1.0 - BATCHNORM_MOMENTUM);
            for c in 0..self.channels {
                self.running_mean.data_mut()[c] =
                    momentum * self.running_mean.data()[c] + one_minus * mean[c];
                self.running_var.data_mut()[c] =
                    momentum * self.running_var.data()[c] + one_minus * var[c];
            }
        } else {
            mean.copy_from_slice(self.running_mean.data());
            var.copy_from_slice(self.running_var.data());
        }

        let eps: T = scalar(BATCHNORM_EPS);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for b in 0..batch {
            for c in 0..self.channels {
                let g = self.gamma.data()[c];
                let be = self.beta.data()[c];
                let (m, s) = (mean[c], inv_std[c]);
                let xr = x.row3(b, c);
                let xh = xhat.row3_mut(b, c);
                for (i, &v) in xr.iter().enumerate() {
                    xh[i] = (v - m) * s;
                }
                let yr = y.row3_mut(b, c);
                for (i, &h) in xhat.row3(b, c).iter().enumerate() {
                    yr[i] = g * h + be;
                }
            }
        }

        self.cached_xhat = Some(xhat);
        self.cached_inv_std = inv_std;
        self.cached_train = train;
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let xhat = self
            .cached_xhat
            .as_ref()
            .ok_or_else(|| backward_before_forward("batchnorm"))?;
        let (batch, len) = (grad_out.dim(0), grad_out.dim(2));
        let n: T = scalar((batch * len) as f64);

        let mut gx = Tensor::zeros(grad_out.shape());
        for c in 0..self.channels {
            let mut sum_gy = T::zero();
            let mut sum_gy_xhat = T::zero();
            for b in 0..batch {
                let gy = grad_out.row3(b, c);
                let xh = xhat.row3(b, c);
                for i in 0..len {
                    sum_gy = sum_gy + gy[i];
                    sum_gy_xhat = sum_gy_xhat + gy[i] * xh[i];
                }
            }
            self.grad_gamma.data_mut()[c] = sum_gy_xhat;
            self.grad_beta.data_mut()[c] = sum_gy;

            let g = self.gamma.data()[c];
            let s = self.cached_inv_std[c];
            for b in 0..batch {
                let gy = grad_out.row3(b, c);
                let xh = xhat.row3(b, c);
                let gxr = gx.row3_mut(b, c);
                if self.cached_train {
                    for i in 0..len {
                        gxr[i] =
                            g * s * (n * gy[i] - sum_gy - xh[i] * sum_gy_xhat) / n;
                    }
                } else {
                    for i in 0..len {
                        gxr[i] = g * s * gy[i];
                    }
                }
            }
        }
        Ok(gx)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Tensor<T>, &mut Tensor<T>)) {
        f(&mut self.gamma, &mut self.grad_gamma);
        f(&mut self.beta, &mut self.grad_beta);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Tensor<T>)) {
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }

    fn name(&self) -> &'static str {
        "batchnorm"
    }
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

#[derive(Default)]
pub struct Relu<T: Scalar> {
    mask: Option<Vec<bool>>,
    _phantom: std::marker::PhantomData<T>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Relu {
            mask: None,
            _phantom: std::marker::PhantomData,
        }
    }
}

impl<T: Scalar> Layer<T> for Relu<T> {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &ForwardCtx) -> Result<Tensor<T>> {
        let mut y = x.clone();
        let mask: Vec<bool> = y
            .data_mut()
            .iter_mut()
            .map(|v| {
                if *v > T::zero() {
                    true
                } else {
                    *v = T::zero();
                    false
                }
            })
            .collect();
        self.mask = Some(mask);
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| backward_before_forward("relu"))?;
        let mut gx = grad_out.clone();
        for (g, &keep) in gx.data_mut().iter_mut().zip(mask.iter()) {
            if !keep {
                *g = T::zero();
            }
        }
        Ok(gx)
    }

    fn name(&self) -> &'static str {
        "relu"
    }
}

// ---------------------------------------------------------------------------
// MaxPool1d
// ---------------------------------------------------------------------------

pub struct MaxPool1d<T: Scalar> {
    pub kernel: usize,
    pub stride: usize,
    argmax: Option<Vec<usize>>,
    in_shape: Vec<usize>,
    _phantom: std::marker::PhantomData<T>,
}

impl<T: Scalar> MaxPool1d<T> {
    pub fn new(kernel: usize, stride: usize) -> Self {
        MaxPool1d {
            kernel,
            stride,
            argmax: None,
            in_shape: Vec::new(),
            _phantom: std::marker::PhantomData,
        }
    }

    pub fn out_len(&self, in_len: usize) -> Result<usize> {
        if in_len < self.kernel {
            return Err(Error::Shape(format!(
                "maxpool: input length {in_len} shorter than kernel {}",
                self.kernel
            )));
        }
        Ok((in_len - self.kernel) / self.stride + 1)
    }
}

impl<T: Scalar> Layer<T> for MaxPool1d<T> {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &ForwardCtx) -> Result<Tensor<T>> {
        if x.rank() != 3 {
            return Err(Error::Shape(format!(
                "maxpool expects rank-3 input, got {:?}",
                x.shape()
            )));
        }
        let (batch, channels, in_len) = (x.dim(0), x.dim(1), x.dim(2));
        let out_len = self.out_len(in_len)?;
        let mut y = Tensor::zeros(&[batch, channels, out_len]);
        let mut argmax = vec![0usize; batch * channels * out_len];
        for b in 0..batch {
            for c in 0..channels {
                let xr = x.row3(b, c);
                let yr = y.row3_mut(b, c);
                let base = (b * channels + c) * out_len;
                for t in 0..out_len {
                    let start = t * self.stride;
                    let mut best = xr[start];
                    let mut best_i = start;
                    // First maximum wins on ties.
                    for (off, &v) in xr[start..start + self.kernel].iter().enumerate() {
                        if v > best {
                            best = v;
                            best_i = start + off;
                        }
                    }
                    yr[t] = best;
                    argmax[base + t] = best_i;
                }
            }
        }
        self.argmax = Some(argmax);
        self.in_shape = x.shape().to_vec();
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let argmax = self
            .argmax
            .as_ref()
            .ok_or_else(|| backward_before_forward("maxpool"))?;
        let (batch, channels, out_len) = (grad_out.dim(0), grad_out.dim(1), grad_out.dim(2));
        let mut gx = Tensor::zeros(&self.in_shape);
        for b in 0..batch {
            for c in 0..channels {
                let gy = grad_out.row3(b, c);
                let base = (b * channels + c) * out_len;
                let gxr = gx.row3_mut(b, c);
                for t in 0..out_len {
                    let i = argmax[base + t];
                    gxr[i] = gxr[i] + gy[t];
                }
            }
        }
        Ok(gx)
    }

    fn name(&self) -> &'static str {
        "maxpool1d"
    }
}

// ---------------------------------------------------------------------------
// GlobalAvgPool
// ---------------------------------------------------------------------------

#[derive(Default)]
pub struct GlobalAvgPool<T: Scalar> {
    in_shape: Vec<usize>,
    _phantom: std::marker::PhantomData<T>,
}

impl<T: Scalar> GlobalAvgPool<T> {
    pub fn new() -> Self {
        GlobalAvgPool {
            in_shape: Vec::new(),
            _phantom: std::marker::PhantomData,
        }
    }
}

impl<T: Scalar> Layer<T> for GlobalAvgPool<T> {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &ForwardCtx) -> Result<Tensor<T>> {
        if x.rank() != 3 {
            return Err(Error::Shape(format!(
                "global average pool expects rank-3 input, got {:?}",
                x.shape()
            )));
        }
        let (batch, channels, len) = (x.dim(0), x.dim(1), x.dim(2));
        let inv: T = scalar(1.0 / len as f64);
        let mut y = Tensor::zeros(&[batch, channels]);
        for b in 0..batch {
            for c in 0..channels {
                let mut acc = T::zero();
                for &v in x.row3(b, c) {
                    acc = acc + v;
                }
                y.row2_mut(b)[c] = acc * inv;
            }
        }
        self.in_shape = x.shape().to_vec();
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if self.in_shape.is_empty() {
            return Err(backward_before_forward("globalavgpool"));
        }
        let len = self.in_shape[2];
        let inv: T = scalar(1.0 / len as f64);
        let mut gx = Tensor::zeros(&self.in_shape);
        for b in 0..self.in_shape[0] {
            for c in 0..self.in_shape[1] {
                let g = grad_out.row2(b)[c] * inv;
                for v in gx.row3_mut(b, c) {
                    *v = g;
                }
            }
        }
        Ok(gx)
    }

    fn name(&self) -> &'static str {
        "globalavgpool"
    }
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

pub struct Dense<T: Scalar> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    grad_weight: Tensor<T>,
    grad_bias: Tensor<T>,
    cached_input: Option<Tensor<T>>,
    cached_in_shape: Vec<usize>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        Dense {
            in_features,
            out_features,
            weight: glorot_with_rng(&[out_features, in_features], in_features, out_features, rng),
            bias: Tensor::zeros(&[out_features]),
            grad_weight: Tensor::zeros(&[out_features, in_features]),
            grad_bias: Tensor::zeros(&[out_features]),
            cached_input: None,
            cached_in_shape: Vec::new(),
        }
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &ForwardCtx) -> Result<Tensor<T>> {
        // Rank-3 inputs are flattened per batch element.
        let batch = x.dim(0);
        let features: usize = x.shape()[1..].iter().product();
        if features != self.in_features {
            return Err(Error::Shape(format!(
                "dense expects {} input features, got {:?}",
                self.in_features,
                x.shape()
            )));
        }
        let x2 = x.reshaped(&[batch, features])?;

        let mut y = Tensor::zeros(&[batch, self.out_features]);
        let weight = &self.weight;
        let bias = &self.bias;
        let in_f = self.in_features;
        let out_f = self.out_features;
        let x2_ref = &x2;
        y.data_mut()
            .par_chunks_mut(out_f)
            .enumerate()
            .for_each(|(b, y_row)| {
                let xr = x2_ref.row2(b);
                for (o, yv) in y_row.iter_mut().enumerate() {
                    let wr = &weight.data()[o * in_f..(o + 1) * in_f];
                    *yv = bias.data()[o] + dot4(wr, xr);
                }
            });

        self.cached_in_shape = x.shape().to_vec();
        self.cached_input = Some(x2);
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x2 = self
            .cached_input
            .as_ref()
            .ok_or_else(|| backward_before_forward("dense"))?;
        let batch = grad_out.dim(0);
        let in_f = self.in_features;
        let out_f = self.out_features;

        self.grad_bias
            .data_mut()
            .par_iter_mut()
            .enumerate()
            .for_each(|(o, gb)| {
                let mut acc = T::zero();
                for b in 0..batch {
                    acc = acc + grad_out.row2(b)[o];
                }
                *gb = acc;
            });
        self.grad_weight
            .data_mut()
            .par_chunks_mut(in_f)
            .enumerate()
            .for_each(|(o, gw_row)| {
                gw_row.fill(T::zero());
                for b in 0..batch {
                    let g = grad_out.row2(b)[o];
                    let xr = x2.row2(b);
                    for i in 0..in_f {
                        gw_row[i] = gw_row[i] + g * xr[i];
                    }
                }
            });

        let mut gx = Tensor::zeros(&[batch, in_f]);
        let weight = &self.weight;
        gx.data_mut()
            .par_chunks_mut(in_f)
            .enumerate()
            .for_each(|(b, gx_row)| {
                let gy = grad_out.row2(b);
                for o in 0..out_f {
                    let g = gy[o];
                    let wr = &weight.data()[o * in_f..(o + 1) * in_f];
                    for i in 0..in_f {
                        gx_row[i] = gx_row[i] + g * wr[i];
                    }
                }
            });
        gx.reshaped(&self.cached_in_shape)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Tensor<T>, &mut Tensor<T>)) {
        f(&mut self.weight, &mut self.grad_weight);
        f(&mut self.bias, &mut self.grad_bias);
    }

    fn name(&self) -> &'static str {
        "dense"
    }
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

pub struct Dropout<T: Scalar> {
    pub rate: f64,
    pub seed: u64,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate in [0, 1)");
        Dropout {
            rate,
            seed,
            mask: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Dropout<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        if ctx.mode == Mode::Eval || self.rate == 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        // Mask derived from (layer seed, global step): deterministic per step
        // and reproducible after a checkpoint resume.
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.seed ^ ctx.step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let keep_scale: T = scalar(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..x.numel())
            .map(|_| {
                if rng.gen::<f64>() < self.rate {
                    T::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let mut y = x.clone();
        for (v, &m) in y.data_mut().iter_mut().zip(mask.iter()) {
            *v = *v * m;
        }
        self.mask = Some(mask);
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.mask {
            None => Ok(grad_out.clone()),
            Some(mask) => {
                let mut gx = grad_out.clone();
                for (g, &m) in gx.data_mut().iter_mut().zip(mask.iter()) {
                    *g = *g * m;
                }
                Ok(gx)
            }
        }
    }

    fn name(&self) -> &'static str {
        "dropout"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn ctx_train() -> ForwardCtx {
        ForwardCtx::train(0)
    }

    #[test]
    fn conv_hand_computed_case() {
        // [1,2,3,4] * [1,1] valid, stride 1 -> [3,5,7]
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv: Conv1d<f64> = Conv1d::new(1, 1, 2, 1, Padding::Valid, &mut rng);
        conv.weight = Tensor::from_vec(&[1, 1, 2], vec![1.0, 1.0]).unwrap();
        conv.bias = Tensor::zeros(&[1]);
        let x = Tensor::from_vec(&[1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv.forward(&x, &ctx_train()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3]);
        assert_eq!(y.data(), &[3.0, 5.0, 7.0]);
    }

    #[test]
    fn conv_identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv: Conv1d<f64> = Conv1d::new(1, 1, 1, 1, Padding::Valid, &mut rng);
        conv.weight = Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        conv.bias = Tensor::zeros(&[1]);
        let x = Tensor::from_vec(&[1, 1, 5], vec![0.5, -1.0, 2.0, 0.0, 3.5]).unwrap();
        let y = conv.forward(&x, &ctx_train()).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_output_length_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv: Conv1d<f32> = Conv1d::new(1, 4, 11, 4, Padding::Same, &mut rng);
        // (625 + 2*5 - 11)/4 + 1 = 157
        assert_eq!(conv.out_len(625).unwrap(), 157);
        let conv: Conv1d<f32> = Conv1d::new(1, 4, 3, 1, Padding::Same, &mut rng);
        assert_eq!(conv.out_len(625).unwrap(), 625);
    }

    #[test]
    fn conv_shape_mismatch_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv: Conv1d<f32> = Conv1d::new(3, 4, 3, 1, Padding::Same, &mut rng);
        let x = Tensor::<f32>::zeros(&[2, 2, 16]);
        assert!(conv.forward(&x, &ctx_train()).is_err());
    }

    #[test]
    fn relu_clamps_and_masks() {
        let mut relu: Relu<f64> = Relu::new();
        let x = Tensor::from_vec(&[1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu.forward(&x, &ctx_train()).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::from_vec(&[1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let gx = relu.backward(&g).unwrap();
        assert_eq!(gx.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn gap_of_constant_channel_is_the_constant() {
        let mut gap: GlobalAvgPool<f64> = GlobalAvgPool::new();
        let x = Tensor::from_vec(&[1, 2, 4], vec![3.0; 8]).unwrap();
        let y = gap.forward(&x, &ctx_train()).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert_eq!(y.data(), &[3.0, 3.0]);
    }

    #[test]
    fn maxpool_takes_first_max_and_routes_gradient() {
        let mut pool: MaxPool1d<f64> = MaxPool1d::new(3, 2);
        let x = Tensor::from_vec(&[1, 1, 7], vec![1.0, 5.0, 5.0, 2.0, 0.0, 7.0, 3.0]).unwrap();
        let y = pool.forward(&x, &ctx_train()).unwrap();
        assert_eq!(y.data(), &[5.0, 5.0, 7.0]);
        let g = Tensor::from_vec(&[1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let gx = pool.backward(&g).unwrap();
        // First max wins the tie at index 1; index 2 collects the second window.
        assert_eq!(gx.data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn batchnorm_train_normalizes_per_channel() {
        let mut bn: BatchNorm1d<f64> = BatchNorm1d::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..2 * 2 * 50).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let x = Tensor::from_vec(&[2, 2, 50], data).unwrap();
        let y = bn.forward(&x, &ctx_train()).unwrap();
        for c in 0..2 {
            let mut acc = 0.0;
            let mut acc2 = 0.0;
            for b in 0..2 {
                for &v in y.row3(b, c) {
                    acc += v;
                    acc2 += v * v;
                }
            }
            let n = 100.0;
            let mean = acc / n;
            let var = acc2 / n - mean * mean;
            assert!(mean.abs() < 1e-5, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "channel {c} var {var}");
        }
    }

    #[test]
    fn batchnorm_rejects_batch_of_one_in_train() {
        let mut bn: BatchNorm1d<f32> = BatchNorm1d::new(1);
        let x = Tensor::<f32>::zeros(&[1, 1, 8]);
        assert!(bn.forward(&x, &ctx_train()).is_err());
        assert!(bn.forward(&x, &ForwardCtx::eval()).is_ok());
    }

    #[test]
    fn dropout_eval_is_identity_and_train_is_seeded() {
        let mut drop: Dropout<f32> = Dropout::new(0.5, 11);
        let x = Tensor::from_vec(&[1, 8], vec![1.0; 8]).unwrap();
        let y_eval = drop.forward(&x, &ForwardCtx::eval()).unwrap();
        assert_eq!(y_eval.data(), x.data());

        let y1 = drop.forward(&x, &ForwardCtx::train(5)).unwrap();
        let y2 = drop.forward(&x, &ForwardCtx::train(5)).unwrap();
        assert_eq!(y1.data(), y2.data());
        let y3 = drop.forward(&x, &ForwardCtx::train(6)).unwrap();
        assert_ne!(y1.data(), y3.data());
        // Surviving entries are scaled by 1 / keep probability.
        assert!(y1.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn dense_flattens_rank3_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut dense: Dense<f64> = Dense::new(6, 2, &mut rng);
        let x = Tensor::<f64>::zeros(&[3, 2, 3]);
        let y = dense.forward(&x, &ctx_train()).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        let g = Tensor::<f64>::zeros(&[3, 2]);
        let gx = dense.backward(&g).unwrap();
        assert_eq!(gx.shape(), &[3, 2, 3]);
    }
}
