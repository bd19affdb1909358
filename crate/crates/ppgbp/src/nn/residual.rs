//! Residual blocks (basic and bottleneck) with optional projection shortcut.

use rand::Rng;

use crate::error::Result;
use crate::nn::layers::{BatchNorm1d, Conv1d, ForwardCtx, Layer, Padding, Relu};
use crate::nn::tensor::{Scalar, Tensor};

/// Residual block variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// conv(k3)-BN-ReLU-conv(k3)-BN + skip, then ReLU.
    Basic,
    /// conv(k1)-BN-ReLU-conv(k3)-BN-ReLU-conv(k1, 4x)-BN + skip, then ReLU.
    Bottleneck,
}

pub const BOTTLENECK_EXPANSION: usize = 4;

pub struct ResidualBlock<T: Scalar> {
    main: Vec<Box<dyn Layer<T>>>,
    /// Projection shortcut (1x1 conv + BN) when shape changes; identity otherwise.
    shortcut: Vec<Box<dyn Layer<T>>>,
    relu_mask: Option<Vec<bool>>,
    kind: BlockKind,
}

impl<T: Scalar> ResidualBlock<T> {
    /// `channels` is the block width: output channels for basic blocks, the
    /// bottleneck width for bottleneck blocks (output = 4 x channels).
    /// Downsampling (stride 2) happens in the first convolution; any shape
    /// change adds a projection shortcut.
    pub fn new(
        kind: BlockKind,
        in_channels: usize,
        channels: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let out_channels = match kind {
            BlockKind::Basic => channels,
            BlockKind::Bottleneck => channels * BOTTLENECK_EXPANSION,
        };
        let mut main: Vec<Box<dyn Layer<T>>> = Vec::new();
        match kind {
            BlockKind::Basic => {
                main.push(Box::new(Conv1d::new(
                    in_channels,
                    channels,
                    3,
                    stride,
                    Padding::Same,
                    rng,
                )));
                main.push(Box::new(BatchNorm1d::new(channels)));
                main.push(Box::new(Relu::new()));
                main.push(Box::new(Conv1d::new(
                    channels,
                    channels,
                    3,
                    1,
                    Padding::Same,
                    rng,
                )));
                main.push(Box::new(BatchNorm1d::new(channels)));
            }
            BlockKind::Bottleneck => {
                main.push(Box::new(Conv1d::new(
                    in_channels,
                    channels,
                    1,
                    stride,
                    Padding::Valid,
                    rng,
                )));
                main.push(Box::new(BatchNorm1d::new(channels)));
                main.push(Box::new(Relu::new()));
                main.push(Box::new(Conv1d::new(
                    channels,
                    channels,
                    3,
                    1,
                    Padding::Same,
                    rng,
                )));
                main.push(Box::new(BatchNorm1d::new(channels)));
                main.push(Box::new(Relu::new()));
                main.push(Box::new(Conv1d::new(
                    channels,
                    out_channels,
                    1,
                    1,
                    Padding::Valid,
                    rng,
                )));
                main.push(Box::new(BatchNorm1d::new(out_channels)));
            }
        }

        let mut shortcut: Vec<Box<dyn Layer<T>>> = Vec::new();
        if stride != 1 || in_channels != out_channels {
            shortcut.push(Box::new(Conv1d::new(
                in_channels,
                out_channels,
                1,
                stride,
                Padding::Valid,
                rng,
            )));
            shortcut.push(Box::new(BatchNorm1d::new(out_channels)));
        }

        ResidualBlock {
            main,
            shortcut,
            relu_mask: None,
            kind,
        }
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }
}

impl<T: Scalar> Layer<T> for ResidualBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        let mut main_out = x.clone();
        for layer in self.main.iter_mut() {
            main_out = layer.forward(&main_out, ctx)?;
        }
        let skip_out = if self.shortcut.is_empty() {
            x.clone()
        } else {
            let mut s = x.clone();
            for layer in self.shortcut.iter_mut() {
                s = layer.forward(&s, ctx)?;
            }
            s
        };

        let mut sum = main_out;
        for (v, &s) in sum.data_mut().iter_mut().zip(skip_out.data().iter()) {
            *v = *v + s;
        }
        let mask: Vec<bool> = sum
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
        self.relu_mask = Some(mask);
        Ok(sum)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.relu_mask.as_ref().ok_or_else(|| {
            crate::error::Error::Shape("residual block: backward before forward".into())
        })?;
        let mut g_sum = grad_out.clone();
        for (g, &keep) in g_sum.data_mut().iter_mut().zip(mask.iter()) {
            if !keep {
                *g = T::zero();
            }
        }

        let mut g_main = g_sum.clone();
        for layer in self.main.iter_mut().rev() {
            g_main = layer.backward(&g_main)?;
        }
        let g_skip = if self.shortcut.is_empty() {
            g_sum
        } else {
            let mut g = g_sum;
            for layer in self.shortcut.iter_mut().rev() {
                g = layer.backward(&g)?;
            }
            g
        };

        let mut gx = g_main;
        for (g, &s) in gx.data_mut().iter_mut().zip(g_skip.data().iter()) {
            *g = *g + s;
        }
        Ok(gx)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Tensor<T>, &mut Tensor<T>)) {
        for layer in self.main.iter_mut() {
            layer.visit_params(f);
        }
        for layer in self.shortcut.iter_mut() {
            layer.visit_params(f);
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Tensor<T>)) {
        for layer in self.main.iter_mut() {
            layer.visit_buffers(f);
        }
        for layer in self.shortcut.iter_mut() {
            layer.visit_buffers(f);
        }
    }

    fn name(&self) -> &'static str {
        match self.kind {
            BlockKind::Basic => "residual_basic",
            BlockKind::Bottleneck => "residual_bottleneck",
        }
    }
}
