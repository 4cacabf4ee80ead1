use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::backdrop::{MaskingLayer, ScalingConvention};
use crate::error::{Error, Result};
use crate::nn::arch::{ArchSpec, LayerSpec};
use crate::nn::conv::conv2d;
use crate::nn::norm::{batch_norm, RunningStats};
use crate::nn::pool::{global_avg_pool, max_pool2d};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    pub init_seed: u64,
    pub mask_seed: u64,
    pub convention: ScalingConvention,
    pub short_circuit: bool,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Layer {
    Conv2d {
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    Relu,
    BatchNorm {
        scale: Tensor,
        shift: Tensor,
        stats: RunningStats,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Mask(MaskingLayer),
    GlobalAvgPool,
    SoftmaxHead,
    Linear {
        weight: Tensor,
        bias: Tensor,
    },
    Flatten,
}

/// A built network: parameters, running statistics and masking layers.
#[derive(Debug, Clone)]
pub struct ModelState {
    spec: ArchSpec,
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    mode: Mode,
}

/// Result of one forward pass.
pub struct Forward {
    pub output: Var,
    /// Input of the last parameterized layer.
    pub penultimate: Var,
    /// Parameter leaves in [`ModelState::params`] order.
    pub params: Vec<Var>,
}

fn he_normal(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Instantiates `spec` for per-sample input shape `input_shape`.
pub fn build_model(spec: &ArchSpec, input_shape: &[usize], opts: BuildOptions) -> Result<ModelState> {
    let shapes = spec.propagate(input_shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.init_seed);
    let mut prev = input_shape.to_vec();
    let mut layers = Vec::with_capacity(spec.layers.len());
    let mut mask_index = 0u64;
    for (layer, out_shape) in spec.layers.iter().zip(&shapes) {
        layers.push(match layer {
            &LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let cin = prev[0];
                Layer::Conv2d {
                    weight: he_normal(&mut rng, &[out_channels, cin, kernel, kernel], cin * kernel * kernel),
                    bias: Tensor::zeros(&[out_channels]),
                    stride,
                    padding,
                }
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Batchnorm => Layer::BatchNorm {
                scale: Tensor::ones(&[prev[0]]),
                shift: Tensor::zeros(&[prev[0]]),
                stats: RunningStats::new(prev[0]),
            },
            &LayerSpec::Maxpool { kernel, stride } => Layer::MaxPool { kernel, stride },
            LayerSpec::Mask { p, mode, tag } => {
                let m = MaskingLayer::new(*p, *mode, opts.mask_seed)?
                    .with_stream(mask_index)
                    .with_tag(tag.clone())
                    .with_convention(opts.convention)
                    .with_short_circuit(opts.short_circuit);
                mask_index += 1;
                Layer::Mask(m)
            }
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerSpec::SoftmaxHead { .. } => Layer::SoftmaxHead,
            &LayerSpec::Linear { out_features } => Layer::Linear {
                weight: he_normal(&mut rng, &[prev[0], out_features], prev[0]),
                bias: Tensor::zeros(&[out_features]),
            },
            LayerSpec::Flatten => Layer::Flatten,
        });
        prev = out_shape.clone();
    }
    Ok(ModelState {
        spec: spec.clone(),
        input_shape: input_shape.to_vec(),
        layers,
        mode: Mode::Train,
    })
}

impl ModelState {
    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn masks(&self) -> impl Iterator<Item = &MaskingLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Mask(m) => Some(m),
            _ => None,
        })
    }

    pub fn masks_mut(&mut self) -> impl Iterator<Item = &mut MaskingLayer> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Mask(m) => Some(m),
            _ => None,
        })
    }

    pub fn mask_mut(&mut self, tag: &str) -> Option<&mut MaskingLayer> {
        self.masks_mut().find(|m| m.tag() == tag)
    }

    /// Named trainable tensors, in a fixed order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv2d { weight, bias, .. } => {
                    out.push((format!("{i}.conv2d.weight"), weight));
                    out.push((format!("{i}.conv2d.bias"), bias));
                }
                Layer::BatchNorm { scale, shift, .. } => {
                    out.push((format!("{i}.batchnorm.scale"), scale));
                    out.push((format!("{i}.batchnorm.shift"), shift));
                }
                Layer::Linear { weight, bias } => {
                    out.push((format!("{i}.linear.weight"), weight));
                    out.push((format!("{i}.linear.bias"), bias));
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d { weight, bias, .. } | Layer::Linear { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                Layer::BatchNorm { scale, shift, .. } => {
                    out.push(scale);
                    out.push(shift);
                }
                _ => {}
            }
        }
        out
    }

    /// Non-trainable state saved alongside the parameters.
    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::BatchNorm { stats, .. } = layer {
                out.push((format!("{i}.batchnorm.running_mean"), &stats.mean));
                out.push((format!("{i}.batchnorm.running_var"), &stats.var));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Layer::BatchNorm { stats, .. } = layer {
                out.push(&mut stats.mean);
                out.push(&mut stats.var);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Runs the network on a batch `x` of shape `(B, ..input_shape)`.
    ///
    /// In training mode masking layers draw fresh masks and batch norm uses
    /// batch statistics. In evaluation mode masks are skipped entirely.
    pub fn forward(&mut self, tape: &mut Tape, x: Var) -> Result<Forward> {
        let xs = tape.shape(x);
        if xs.len() != self.input_shape.len() + 1 || xs[1..] != self.input_shape[..] {
            return Err(Error::Shape {
                op: "forward",
                lhs: xs.to_vec(),
                rhs: self.input_shape.clone(),
            });
        }
        let training = self.mode == Mode::Train;
        let last_param_layer = self
            .layers
            .iter()
            .rposition(|l| matches!(l, Layer::Conv2d { .. } | Layer::Linear { .. }));
        let mut h = x;
        let mut penultimate = x;
        let mut params = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if Some(i) == last_param_layer {
                penultimate = h;
            }
            h = match layer {
                Layer::Conv2d {
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let w = tape.param(weight.clone());
                    let b = tape.param(bias.clone());
                    params.extend([w, b]);
                    conv2d(tape, h, w, Some(b), *stride, *padding)?
                }
                Layer::Relu => tape.relu(h)?,
                Layer::BatchNorm {
                    scale,
                    shift,
                    stats,
                } => {
                    let g = tape.param(scale.clone());
                    let b = tape.param(shift.clone());
                    params.extend([g, b]);
                    batch_norm(tape, h, g, b, stats, training)?
                }
                Layer::MaxPool { kernel, stride } => max_pool2d(tape, h, *kernel, *stride)?,
                Layer::Mask(m) => {
                    if training {
                        m.forward(tape, h)?
                    } else {
                        h
                    }
                }
                Layer::GlobalAvgPool => global_avg_pool(tape, h)?,
                Layer::SoftmaxHead => {
                    if tape.shape(h).len() == 4 {
                        global_avg_pool(tape, h)?
                    } else {
                        h
                    }
                }
                Layer::Linear { weight, bias } => {
                    let w = tape.param(weight.clone());
                    let b = tape.param(bias.clone());
                    params.extend([w, b]);
                    let y = tape.matmul(h, w)?;
                    tape.add(y, b)?
                }
                Layer::Flatten => {
                    let s = tape.shape(h);
                    let flat = [s[0], s[1..].iter().product()];
                    tape.reshape(h, &flat)?
                }
            };
        }
        Ok(Forward {
            output: h,
            penultimate,
            params,
        })
    }

    /// Forward pass in evaluation mode without recording gradients,
    /// returning the output tensor.
    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(self.infer(x)?.0)
    }

    /// Like [`ModelState::predict`], also returning the input of the last
    /// parameterized layer.
    pub fn infer(&mut self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let prev = self.mode;
        self.mode = Mode::Eval;
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, xv);
        self.mode = prev;
        let out = out?;
        Ok((
            tape.value(out.output).clone(),
            tape.value(out.penultimate).clone(),
        ))
    }
}
