//! Declarative network descriptions and the built-in presets.

use serde::{Deserialize, Serialize};

use crate::backdrop::{check_probability, MaskMode};
use crate::error::{Error, Result};
use crate::nn::conv::output_extent;

fn one() -> usize {
    1
}

/// One entry of an [`ArchSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Relu,
    Batchnorm,
    Maxpool {
        kernel: usize,
        stride: usize,
    },
    /// A backdrop masking layer. `tag` binds it to a probability in the
    /// training configuration.
    Mask {
        #[serde(default)]
        p: f64,
        #[serde(default)]
        mode: MaskMode,
        tag: String,
    },
    GlobalAvgPool,
    /// Averages a `(classes, h, w)` heatmap (if spatial) into class logits.
    SoftmaxHead {
        num_classes: usize,
    },
    Linear {
        out_features: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Batchnorm => "batchnorm",
            LayerSpec::Maxpool { .. } => "maxpool",
            LayerSpec::Mask { .. } => "mask",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::SoftmaxHead { .. } => "softmax_head",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Flatten => "flatten",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv2d { .. } | LayerSpec::Batchnorm | LayerSpec::Linear { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

impl ArchSpec {
    /// Per-sample output shape after every layer (batch axis omitted).
    /// Fails naming the first layer that cannot accept its input.
    pub fn propagate(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut tags: Vec<&str> = Vec::new();
        let mut shape = input.to_vec();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter().enumerate() {
            let fail = |msg: String| Error::Build {
                index,
                layer: layer.kind().to_string(),
                msg,
            };
            shape = match *layer {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let &[_, h, w] = shape.as_slice() else {
                        return Err(fail(format!("needs (C, H, W) input, got {shape:?}")));
                    };
                    if out_channels == 0 {
                        return Err(fail("out_channels must be positive".into()));
                    }
                    match (
                        output_extent(h, kernel, stride, padding),
                        output_extent(w, kernel, stride, padding),
                    ) {
                        (Some(ho), Some(wo)) => vec![out_channels, ho, wo],
                        _ => {
                            return Err(fail(format!(
                                "kernel {kernel} stride {stride} padding {padding} leaves no output on {h}x{w}"
                            )))
                        }
                    }
                }
                LayerSpec::Relu => shape,
                LayerSpec::Batchnorm => {
                    if shape.len() != 1 && shape.len() != 3 {
                        return Err(fail(format!("needs (C) or (C, H, W) input, got {shape:?}")));
                    }
                    shape
                }
                LayerSpec::Maxpool { kernel, stride } => {
                    let &[c, h, w] = shape.as_slice() else {
                        return Err(fail(format!("needs (C, H, W) input, got {shape:?}")));
                    };
                    match (output_extent(h, kernel, stride, 0), output_extent(w, kernel, stride, 0)) {
                        (Some(ho), Some(wo)) => vec![c, ho, wo],
                        _ => {
                            return Err(fail(format!(
                                "window {kernel} stride {stride} leaves no output on {h}x{w}"
                            )))
                        }
                    }
                }
                LayerSpec::Mask { p, mode, ref tag } => {
                    check_probability(p).map_err(|e| fail(e.to_string()))?;
                    if tags.contains(&tag.as_str()) {
                        return Err(fail(format!("duplicate mask tag {tag:?}")));
                    }
                    tags.push(tag);
                    if mode == MaskMode::Spatial && shape.len() != 3 {
                        return Err(fail(format!(
                            "spatial masking needs (C, H, W) input, got {shape:?}"
                        )));
                    }
                    shape
                }
                LayerSpec::GlobalAvgPool => {
                    let &[c, _, _] = shape.as_slice() else {
                        return Err(fail(format!("needs (C, H, W) input, got {shape:?}")));
                    };
                    vec![c]
                }
                LayerSpec::SoftmaxHead { num_classes } => {
                    if shape.first() != Some(&num_classes) || (shape.len() != 1 && shape.len() != 3)
                    {
                        return Err(fail(format!(
                            "needs ({num_classes}) or ({num_classes}, h, w) input, got {shape:?}"
                        )));
                    }
                    vec![num_classes]
                }
                LayerSpec::Linear { out_features } => {
                    if shape.len() != 1 {
                        return Err(fail(format!("needs flat input, got {shape:?}")));
                    }
                    vec![out_features]
                }
                LayerSpec::Flatten => vec![shape.iter().product()],
            };
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    /// The same network with every masking layer removed.
    pub fn without_masks(&self) -> ArchSpec {
        ArchSpec {
            name: self.name.clone(),
            layers: self
                .layers
                .iter()
                .filter(|l| !matches!(l, LayerSpec::Mask { .. }))
                .cloned()
                .collect(),
        }
    }

    pub fn mask_tags(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Mask { tag, .. } => Some(tag.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Number of trainable scalars for the given input shape.
    pub fn param_count(&self, input: &[usize]) -> Result<usize> {
        let shapes = self.propagate(input)?;
        let mut prev = input.to_vec();
        let mut total = 0;
        for (layer, out) in self.layers.iter().zip(&shapes) {
            total += match *layer {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    ..
                } => out_channels * prev[0] * kernel * kernel + out_channels,
                LayerSpec::Batchnorm => 2 * prev[0],
                LayerSpec::Linear { out_features } => (prev[0] + 1) * out_features,
                _ => 0,
            };
            prev = out.clone();
        }
        Ok(total)
    }
}

fn conv(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        out_channels,
        kernel,
        stride,
        padding,
    }
}

fn mask(mode: MaskMode, tag: &str) -> LayerSpec {
    LayerSpec::Mask {
        p: 0.0,
        mode,
        tag: tag.to_string(),
    }
}

/// conv → relu → batchnorm
fn block(out: &mut Vec<LayerSpec>, channels: usize, stride: usize) {
    out.extend([conv(channels, 3, stride, 1), LayerSpec::Relu, LayerSpec::Batchnorm]);
}

fn pool() -> LayerSpec {
    LayerSpec::Maxpool {
        kernel: 2,
        stride: 2,
    }
}

/// Names accepted by [`preset`].
pub const PRESETS: &[&str] = &["gp-small", "heatmap-small", "mlp-rank", "mlp-latent"];

/// Built-in architectures.
///
/// * `gp-small`: `(1, 128, 128)` two-scale texture classifier with a
///   fine-scale spatial mask `p_s` on the `64×64` lattice after the first
///   pooling and a coarse mask `p_l` on the final `4×4` class heatmap.
/// * `heatmap-small`: `(3, 32, 32)` all-convolutional classifier ending in
///   a `10`-class `6×6` heatmap with a spatial mask `p` before averaging.
/// * `mlp-rank`: flat input to a single score, masked along the batch with
///   `p`; for rank-statistic training.
/// * `mlp-latent`: flat input to 3 class logits through an 8-wide latent
///   layer; for the composite loss.
pub fn preset(name: &str) -> Option<ArchSpec> {
    let mut layers = Vec::new();
    match name {
        "gp-small" => {
            block(&mut layers, 8, 1);
            block(&mut layers, 8, 1);
            layers.push(pool());
            layers.push(mask(MaskMode::Spatial, "p_s"));
            for _ in 0..4 {
                block(&mut layers, 16, 1);
                layers.push(pool());
            }
            block(&mut layers, 16, 1);
            layers.push(conv(4, 1, 1, 0));
            layers.push(mask(MaskMode::Spatial, "p_l"));
            layers.push(LayerSpec::SoftmaxHead { num_classes: 4 });
        }
        "heatmap-small" => {
            block(&mut layers, 24, 1);
            block(&mut layers, 24, 2);
            block(&mut layers, 48, 1);
            block(&mut layers, 48, 2);
            layers.extend([conv(48, 3, 1, 0), LayerSpec::Relu, LayerSpec::Batchnorm]);
            layers.push(conv(10, 1, 1, 0));
            layers.push(mask(MaskMode::Spatial, "p"));
            layers.push(LayerSpec::GlobalAvgPool);
            layers.push(LayerSpec::SoftmaxHead { num_classes: 10 });
        }
        "mlp-rank" => {
            layers.extend([
                LayerSpec::Flatten,
                LayerSpec::Linear { out_features: 16 },
                LayerSpec::Relu,
                LayerSpec::Linear { out_features: 1 },
                mask(MaskMode::Batch, "p"),
            ]);
        }
        "mlp-latent" => {
            layers.extend([
                LayerSpec::Flatten,
                LayerSpec::Linear { out_features: 16 },
                LayerSpec::Relu,
                LayerSpec::Linear { out_features: 8 },
                LayerSpec::Relu,
                LayerSpec::Linear { out_features: 3 },
            ]);
        }
        _ => return None,
    }
    Some(ArchSpec {
        name: name.to_string(),
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gp_small_chains_to_four_classes() {
        let spec = preset("gp-small").unwrap();
        let shapes = spec.propagate(&[1, 128, 128]).unwrap();
        assert_eq!(shapes.last().unwrap(), &vec![4]);
        // fine mask sits on a 64x64 lattice, coarse mask on 4x4
        let lattices: Vec<_> = spec
            .layers
            .iter()
            .zip(&shapes)
            .filter(|(l, _)| matches!(l, LayerSpec::Mask { .. }))
            .map(|(_, s)| (s[1], s[2]))
            .collect();
        assert_eq!(lattices, vec![(64, 64), (4, 4)]);
    }

    #[test]
    fn heatmap_small_has_six_by_six_heatmap() {
        let spec = preset("heatmap-small").unwrap();
        let shapes = spec.propagate(&[3, 32, 32]).unwrap();
        let mask_at = spec
            .layers
            .iter()
            .position(|l| matches!(l, LayerSpec::Mask { .. }))
            .unwrap();
        assert_eq!(shapes[mask_at], vec![10, 6, 6]);
        assert_eq!(shapes.last().unwrap(), &vec![10]);
    }

    #[test]
    fn bad_chain_names_the_layer() {
        let spec = ArchSpec {
            name: "bad".into(),
            layers: vec![LayerSpec::Relu, LayerSpec::Linear { out_features: 2 }],
        };
        match spec.propagate(&[1, 4, 4]) {
            Err(Error::Build { index, layer, .. }) => {
                assert_eq!(index, 1);
                assert_eq!(layer, "linear");
            }
            other => panic!("expected build error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_tags_rejected() {
        let spec = ArchSpec {
            name: "dup".into(),
            layers: vec![mask(MaskMode::Batch, "p"), mask(MaskMode::Batch, "p")],
        };
        assert!(spec.propagate(&[3]).is_err());
    }

    #[test]
    fn two_layer_param_count() {
        // 3x3 conv 1->2 (18 + 2), batchnorm over 2 channels (4), then a
        // linear map from 2*4*4=32 features to 3 (96 + 3).
        let spec = ArchSpec {
            name: "tiny".into(),
            layers: vec![
                conv(2, 3, 1, 1),
                LayerSpec::Batchnorm,
                LayerSpec::Flatten,
                LayerSpec::Linear { out_features: 3 },
            ],
        };
        assert_eq!(spec.param_count(&[1, 4, 4]).unwrap(), 20 + 4 + 99);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = preset("gp-small").unwrap();
        let text = toml::to_string(&spec).unwrap();
        let back: ArchSpec = toml::from_str(&text).unwrap();
        assert_eq!(spec, back);
    }
}
