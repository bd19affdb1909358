//! Declarative architecture configs and their materialization.
//!
//! `build_architecture` produces the 1D translations of AlexNet and
//! ResNet-18/34/50 as an ordered layer list; `Model::from_config` turns the
//! list into live layers with seeded Glorot initialization.

use serde::{Deserialize, Serialize};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{
    BatchNorm1d, Conv1d, Dense, Dropout, ForwardCtx, GlobalAvgPool, Layer, MaxPool1d, Padding,
    Relu,
};
use crate::nn::residual::{BlockKind, ResidualBlock, BOTTLENECK_EXPANSION};
use crate::nn::tensor::{Scalar, Tensor};

/// SplitMix64-style seed derivation for per-layer rngs.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum HeadSpec {
    Classification { bins: usize },
    Regression,
}

impl HeadSpec {
    pub fn width(&self) -> usize {
        match self {
            HeadSpec::Classification { bins } => *bins,
            HeadSpec::Regression => 1,
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, HeadSpec::Classification { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Original layer widths.
    Full,
    /// All channel and dense widths divided by 4 (minimum 8); block
    /// structure unchanged. Keeps training tractable on commodity CPUs.
    Desk,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!("unknown profile '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Profile::Full => "full",
            Profile::Desk => "desk",
        }
    }

    fn width(&self, w: usize) -> usize {
        match self {
            Profile::Full => w,
            Profile::Desk => (w / 4).max(8),
        }
    }
}

/// One layer in declaration order. Input channel counts are inferred by
/// shape propagation when the model is materialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    Batchnorm,
    Relu,
    Maxpool1d {
        kernel: usize,
        stride: usize,
    },
    Globalavgpool,
    Dense {
        width: usize,
    },
    Dropout {
        rate: f64,
    },
    ResidualBasic {
        channels: usize,
        stride: usize,
    },
    ResidualBottleneck {
        mid_channels: usize,
        stride: usize,
    },
    SoftmaxHead {
        bins: usize,
    },
    LinearHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub name: String,
    pub head: HeadSpec,
    pub profile: Profile,
    pub input_length: usize,
    pub layers: Vec<LayerSpec>,
}

/// Builds the named architecture. `name` is one of `alexnet`, `resnet18`,
/// `resnet34`, `resnet50`.
pub fn build_architecture(
    name: &str,
    head: HeadSpec,
    profile: Profile,
    input_length: usize,
) -> Result<ArchitectureConfig> {
    let layers = match name {
        "alexnet" => alexnet_layers(profile, head),
        "resnet18" => resnet_layers(&[2, 2, 2, 2], BlockKind::Basic, profile, head),
        "resnet34" => resnet_layers(&[3, 4, 6, 3], BlockKind::Basic, profile, head),
        "resnet50" => resnet_layers(&[3, 4, 6, 3], BlockKind::Bottleneck, profile, head),
        other => {
            return Err(Error::Config(format!(
                "unknown architecture '{other}' (known: alexnet, resnet18, resnet34, resnet50)"
            )))
        }
    };
    Ok(ArchitectureConfig {
        name: name.to_string(),
        head,
        profile,
        input_length,
        layers,
    })
}

fn head_layer(head: HeadSpec) -> LayerSpec {
    match head {
        HeadSpec::Classification { bins } => LayerSpec::SoftmaxHead { bins },
        HeadSpec::Regression => LayerSpec::LinearHead,
    }
}

fn alexnet_layers(profile: Profile, head: HeadSpec) -> Vec<LayerSpec> {
    let conv_w = [96, 256, 384, 384, 256].map(|w| profile.width(w));
    let dense_w = profile.width(4096);
    let mut layers = vec![
        LayerSpec::Conv1d {
            out_channels: conv_w[0],
            kernel: 11,
            stride: 4,
            padding: Padding::Same,
        },
        LayerSpec::Relu,
        LayerSpec::Maxpool1d { kernel: 3, stride: 2 },
        LayerSpec::Conv1d {
            out_channels: conv_w[1],
            kernel: 5,
            stride: 1,
            padding: Padding::Same,
        },
        LayerSpec::Relu,
        LayerSpec::Maxpool1d { kernel: 3, stride: 2 },
        LayerSpec::Conv1d {
            out_channels: conv_w[2],
            kernel: 3,
            stride: 1,
            padding: Padding::Same,
        },
        LayerSpec::Relu,
        LayerSpec::Conv1d {
            out_channels: conv_w[3],
            kernel: 3,
            stride: 1,
            padding: Padding::Same,
        },
        LayerSpec::Relu,
        LayerSpec::Conv1d {
            out_channels: conv_w[4],
            kernel: 3,
            stride: 1,
            padding: Padding::Same,
        },
        LayerSpec::Relu,
        LayerSpec::Maxpool1d { kernel: 3, stride: 2 },
    ];
    for _ in 0..2 {
        layers.push(LayerSpec::Dense { width: dense_w });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::Dropout { rate: 0.5 });
    }
    layers.push(head_layer(head));
    layers
}

fn resnet_layers(
    blocks_per_stage: &[usize; 4],
    kind: BlockKind,
    profile: Profile,
    head: HeadSpec,
) -> Vec<LayerSpec> {
    let stage_w = [64, 128, 256, 512].map(|w| profile.width(w));
    let mut layers = vec![
        LayerSpec::Conv1d {
            out_channels: stage_w[0],
            kernel: 7,
            stride: 2,
            padding: Padding::Same,
        },
        LayerSpec::Batchnorm,
        LayerSpec::Relu,
        LayerSpec::Maxpool1d { kernel: 3, stride: 2 },
    ];
    for (stage, &n_blocks) in blocks_per_stage.iter().enumerate() {
        for block in 0..n_blocks {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            layers.push(match kind {
                BlockKind::Basic => LayerSpec::ResidualBasic {
                    channels: stage_w[stage],
                    stride,
                },
                BlockKind::Bottleneck => LayerSpec::ResidualBottleneck {
                    mid_channels: stage_w[stage],
                    stride,
                },
            });
        }
    }
    layers.push(LayerSpec::Globalavgpool);
    layers.push(head_layer(head));
    layers
}

/// Shape tracked while materializing a config.
#[derive(Debug, Clone, Copy, PartialEq)]
enum TrackedShape {
    Conv { channels: usize, length: usize },
    Flat { features: usize },
}

/// A materialized network: an ordered layer stack.
pub struct Model<T: Scalar> {
    pub config: ArchitectureConfig,
    pub init_seed: u64,
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Model<T> {
    pub fn from_config(config: &ArchitectureConfig, seed: u64) -> Result<Self> {
        let mut layers: Vec<Box<dyn Layer<T>>> = Vec::with_capacity(config.layers.len());
        let mut shape = TrackedShape::Conv {
            channels: 1,
            length: config.input_length,
        };
        for (i, spec) in config.layers.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
            let (layer, next): (Box<dyn Layer<T>>, TrackedShape) = match (*spec).clone() {
                LayerSpec::Conv1d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (channels, length) = expect_conv(&shape, "conv1d")?;
                    let conv = Conv1d::new(channels, out_channels, kernel, stride, padding, &mut rng);
                    let out_len = conv.out_len(length)?;
                    (
                        Box::new(conv),
                        TrackedShape::Conv {
                            channels: out_channels,
                            length: out_len,
                        },
                    )
                }
                LayerSpec::Batchnorm => {
                    let (channels, _) = expect_conv(&shape, "batchnorm")?;
                    (Box::new(BatchNorm1d::new(channels)), shape)
                }
                LayerSpec::Relu => (Box::new(Relu::new()), shape),
                LayerSpec::Maxpool1d { kernel, stride } => {
                    let (channels, length) = expect_conv(&shape, "maxpool1d")?;
                    let pool = MaxPool1d::new(kernel, stride);
                    let out_len = pool.out_len(length)?;
                    (
                        Box::new(pool),
                        TrackedShape::Conv {
                            channels,
                            length: out_len,
                        },
                    )
                }
                LayerSpec::Globalavgpool => {
                    let (channels, _) = expect_conv(&shape, "globalavgpool")?;
                    (
                        Box::new(GlobalAvgPool::new()),
                        TrackedShape::Flat { features: channels },
                    )
                }
                LayerSpec::Dense { width } => {
                    let features = flat_features(&shape);
                    (
                        Box::new(Dense::new(features, width, &mut rng)),
                        TrackedShape::Flat { features: width },
                    )
                }
                LayerSpec::Dropout { rate } => (
                    Box::new(Dropout::new(rate, mix_seed(seed, 0x0D0D_0000 + i as u64))),
                    shape,
                ),
                LayerSpec::ResidualBasic { channels, stride } => {
                    let (in_channels, length) = expect_conv(&shape, "residual block")?;
                    let block =
                        ResidualBlock::new(BlockKind::Basic, in_channels, channels, stride, &mut rng);
                    (
                        Box::new(block),
                        TrackedShape::Conv {
                            channels,
                            length: strided_same_len(length, stride),
                        },
                    )
                }
                LayerSpec::ResidualBottleneck {
                    mid_channels,
                    stride,
                } => {
                    let (in_channels, length) = expect_conv(&shape, "residual block")?;
                    let block = ResidualBlock::new(
                        BlockKind::Bottleneck,
                        in_channels,
                        mid_channels,
                        stride,
                        &mut rng,
                    );
                    (
                        Box::new(block),
                        TrackedShape::Conv {
                            channels: mid_channels * BOTTLENECK_EXPANSION,
                            length: strided_same_len(length, stride),
                        },
                    )
                }
                LayerSpec::SoftmaxHead { bins } => {
                    let features = flat_features(&shape);
                    (
                        Box::new(Dense::new(features, bins, &mut rng)),
                        TrackedShape::Flat { features: bins },
                    )
                }
                LayerSpec::LinearHead => {
                    let features = flat_features(&shape);
                    (
                        Box::new(Dense::new(features, 1, &mut rng)),
                        TrackedShape::Flat { features: 1 },
                    )
                }
            };
            layers.push(layer);
            shape = next;
        }

        let final_features = flat_features(&shape);
        if final_features != config.head.width() {
            return Err(Error::Shape(format!(
                "architecture ends with {final_features} features, head wants {}",
                config.head.width()
            )));
        }

        Ok(Model {
            config: config.clone(),
            init_seed: seed,
            layers,
        })
    }

    /// Forward pass over a batch of windows, shape [batch, input_length].
    pub fn forward(&mut self, x: &Tensor<T>, ctx: &ForwardCtx) -> Result<Tensor<T>> {
        if x.rank() != 2 || x.dim(1) != self.config.input_length {
            return Err(Error::Shape(format!(
                "model expects [batch, {}], got {:?}",
                self.config.input_length,
                x.shape()
            )));
        }
        let mut out = x.reshaped(&[x.dim(0), 1, x.dim(1)])?;
        for layer in self.layers.iter_mut() {
            out = layer.forward(&out, ctx)?;
        }
        Ok(out)
    }

    /// Backward pass from the loss gradient at the head.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Tensor<T>, &mut Tensor<T>)) {
        for layer in self.layers.iter_mut() {
            layer.visit_params(f);
        }
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Tensor<T>)) {
        for layer in self.layers.iter_mut() {
            layer.visit_buffers(f);
        }
    }

    pub fn param_shapes(&mut self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        self.visit_params(&mut |p, _| shapes.push(p.shape().to_vec()));
        shapes
    }

    pub fn param_count(&mut self) -> usize {
        let mut count = 0;
        self.visit_params(&mut |p, _| count += p.numel());
        count
    }

    pub fn head_width(&self) -> usize {
        self.config.head.width()
    }

    /// Number of residual blocks in the stack (for structural assertions).
    pub fn residual_block_count(&self) -> usize {
        self.config
            .layers
            .iter()
            .filter(|l| {
                matches!(
                    l,
                    LayerSpec::ResidualBasic { .. } | LayerSpec::ResidualBottleneck { .. }
                )
            })
            .count()
    }
}

fn expect_conv(shape: &TrackedShape, what: &str) -> Result<(usize, usize)> {
    match shape {
        TrackedShape::Conv { channels, length } => Ok((*channels, *length)),
        TrackedShape::Flat { .. } => Err(Error::Shape(format!(
            "{what} needs [batch, channel, length] input but the stack is already flat"
        ))),
    }
}

fn flat_features(shape: &TrackedShape) -> usize {
    match shape {
        TrackedShape::Conv { channels, length } => channels * length,
        TrackedShape::Flat { features } => *features,
    }
}

/// Output length of a stride-s same-padded k3 convolution: ceil(len / s).
fn strided_same_len(length: usize, stride: usize) -> usize {
    (length + stride - 1) / stride
}
