//! Backdrop masking layers.
//!
//! A [`MaskingLayer`] returns its input unchanged in the forward pass. In the
//! backward pass it keeps each gradient path independently with probability
//! `1 - p` and rescales the kept ones by `N / |b|₁`, where `b` is the binary
//! keep mask and `N` its length. Under the default [`ScalingConvention`] the
//! masked gradient, averaged over all nonempty masks, is exactly the full
//! gradient.
//!
//! Two masking axes are supported:
//!
//! * [`MaskMode::Batch`] draws one bit per sample along the leading axis.
//! * [`MaskMode::Spatial`] draws one bit per `(sample, row, column)` site of a
//!   `(B, C, H, W)` activation; the bit is shared by all channels and the
//!   rescaling is per sample over its own `H·W` lattice.
//!
//! An all-zero mask is never used: the whole mask (or, in spatial mode, the
//! sample's lattice) is redrawn until at least one entry is kept.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Backward, BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    #[default]
    Batch,
    Spatial,
}

/// How kept gradients are rescaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingConvention {
    /// `N / |b|₁`: conditionally unbiased.
    #[default]
    Unbiased,
    /// `(N / |b|₁)·(1 - p)`.
    KeepScaled,
}

impl ScalingConvention {
    fn scale(self, n: usize, kept: usize, p: f64) -> f64 {
        let base = n as f64 / kept as f64;
        match self {
            ScalingConvention::Unbiased => base,
            ScalingConvention::KeepScaled => base * (1.0 - p),
        }
    }
}

pub fn check_probability(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!(
            "drop probability must lie in [0, 1), got {p}"
        )));
    }
    Ok(())
}

/// Draws `n` independent keep bits, each 1 with probability `1 - p`,
/// redrawing the whole vector until at least one bit is set.
pub fn bernoulli_keep_mask<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<Vec<u8>> {
    check_probability(p)?;
    if n == 0 {
        return Err(Error::invalid("bernoulli_keep_mask", "mask length must be at least 1"));
    }
    let keep = 1.0 - p;
    let mut mask = vec![0u8; n];
    loop {
        let mut any = false;
        for bit in mask.iter_mut() {
            *bit = u8::from(rng.random::<f64>() < keep);
            any |= *bit == 1;
        }
        if any {
            return Ok(mask);
        }
    }
}

/// Expected number of unmasked gradient contributions per step.
pub fn effective_batch_size(batch: usize, p: f64) -> f64 {
    batch as f64 * (1.0 - p)
}

fn count_kept(op: &'static str, mask: &[u8]) -> Result<usize> {
    let kept = mask.iter().filter(|&&b| b != 0).count();
    if kept == 0 {
        return Err(Error::invalid(op, "empty mask reached the backward pass"));
    }
    Ok(kept)
}

/// Masks and rescales a gradient along its leading (batch) axis.
pub fn mask_backward_batch(
    g: &Tensor,
    mask: &[u8],
    p: f64,
    convention: ScalingConvention,
) -> Result<Tensor> {
    let n = g.shape().first().copied().unwrap_or(0);
    if mask.len() != n {
        return Err(Error::Shape {
            op: "mask_backward_batch",
            lhs: g.shape().to_vec(),
            rhs: vec![mask.len()],
        });
    }
    let kept = count_kept("mask_backward_batch", mask)?;
    let scale = convention.scale(n, kept, p);
    let inner = g.numel() / n;
    let mut out = Tensor::zeros(g.shape());
    for ((dst, src), &b) in out
        .data_mut()
        .chunks_mut(inner)
        .zip(g.data().chunks(inner))
        .zip(mask)
    {
        if b != 0 {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s * scale;
            }
        }
    }
    Ok(out)
}

/// Masks and rescales a `(B, C, H, W)` gradient with a `(B, H, W)` mask
/// shared across channels, normalized per sample.
pub fn mask_backward_spatial(
    g: &Tensor,
    mask: &[u8],
    p: f64,
    convention: ScalingConvention,
) -> Result<Tensor> {
    let &[b, c, h, w] = g.shape() else {
        return Err(Error::invalid(
            "mask_backward_spatial",
            format!("expected (B, C, H, W) gradient, got {:?}", g.shape()),
        ));
    };
    let sites = h * w;
    if mask.len() != b * sites {
        return Err(Error::Shape {
            op: "mask_backward_spatial",
            lhs: g.shape().to_vec(),
            rhs: vec![b, h, w],
        });
    }
    let mut out = Tensor::zeros(g.shape());
    let od = out.data_mut();
    let gd = g.data();
    for n in 0..b {
        let sample_mask = &mask[n * sites..(n + 1) * sites];
        let kept = count_kept("mask_backward_spatial", sample_mask)?;
        let scale = convention.scale(sites, kept, p);
        for ch in 0..c {
            let base = (n * c + ch) * sites;
            for (s, &bit) in sample_mask.iter().enumerate() {
                if bit != 0 {
                    od[base + s] = gd[base + s] * scale;
                }
            }
        }
    }
    Ok(out)
}

/// A drawn mask: `[N]` for batch mode, `[B, H, W]` for spatial mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub shape: Vec<usize>,
    pub keep: Vec<u8>,
}

impl Mask {
    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&b| b != 0).count()
    }
}

/// The masking layer: identity forward, masked backward.
#[derive(Debug, Clone)]
pub struct MaskingLayer {
    p: f64,
    mode: MaskMode,
    convention: ScalingConvention,
    tag: String,
    seed: u64,
    rng: ChaCha8Rng,
    short_circuit: bool,
    frozen: Option<Vec<u8>>,
    last_mask: Option<Mask>,
}

impl MaskingLayer {
    pub fn new(p: f64, mode: MaskMode, seed: u64) -> Result<Self> {
        check_probability(p)?;
        Ok(MaskingLayer {
            p,
            mode,
            convention: ScalingConvention::default(),
            tag: String::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            short_circuit: false,
            frozen: None,
            last_mask: None,
        })
    }

    pub fn with_convention(mut self, convention: ScalingConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    /// Lets ops upstream of this layer skip work on masked-out paths
    /// instead of multiplying by zero.
    pub fn with_short_circuit(mut self, on: bool) -> Self {
        self.short_circuit = on;
        self
    }

    pub fn short_circuit(&self) -> bool {
        self.short_circuit
    }

    /// Uses `stream` of the seed's RNG, so layers sharing one seed draw
    /// independent masks.
    pub fn with_stream(mut self, stream: u64) -> Self {
        self.rng.set_stream(stream);
        self
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn set_p(&mut self, p: f64) -> Result<()> {
        check_probability(p)?;
        self.p = p;
        Ok(())
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    pub fn convention(&self) -> ScalingConvention {
        self.convention
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uses `keep` on every subsequent forward instead of drawing. Meant for
    /// tests that need a deterministic backward pass.
    pub fn freeze(&mut self, keep: Vec<u8>) {
        self.frozen = Some(keep);
    }

    pub fn unfreeze(&mut self) {
        self.frozen = None;
    }

    /// The mask drawn on the most recent forward pass.
    pub fn last_mask(&self) -> Option<&Mask> {
        self.last_mask.as_ref()
    }

    fn draw(&mut self, shape: &[usize]) -> Result<Mask> {
        let (mask_shape, groups, group_len) = match self.mode {
            MaskMode::Batch => {
                let n = *shape.first().ok_or_else(|| {
                    Error::invalid("mask_forward", "batch masking needs a leading axis")
                })?;
                (vec![n], 1, n)
            }
            MaskMode::Spatial => {
                let &[b, _, h, w] = shape else {
                    return Err(Error::invalid(
                        "mask_forward",
                        format!("spatial masking needs (B, C, H, W), got {shape:?}"),
                    ));
                };
                (vec![b, h, w], b, h * w)
            }
        };
        if let Some(keep) = &self.frozen {
            if keep.len() != groups * group_len {
                return Err(Error::Shape {
                    op: "mask_forward",
                    lhs: mask_shape,
                    rhs: vec![keep.len()],
                });
            }
            return Ok(Mask {
                shape: mask_shape,
                keep: keep.clone(),
            });
        }
        let mut keep = Vec::with_capacity(groups * group_len);
        for _ in 0..groups {
            keep.extend(bernoulli_keep_mask(group_len, self.p, &mut self.rng)?);
        }
        Ok(Mask {
            shape: mask_shape,
            keep,
        })
    }

    /// Draws a fresh mask and records an identity op whose backward applies
    /// it. The output value is a bitwise copy of the input.
    pub fn forward(&mut self, tape: &mut Tape, v: Var) -> Result<Var> {
        let mask = self.draw(tape.shape(v))?;
        if self.short_circuit {
            tape.set_skip_blocked(true);
        }
        let value = tape.value(v).clone();
        let rule = MaskBackward {
            keep: mask.keep.clone(),
            p: self.p,
            mode: self.mode,
            convention: self.convention,
        };
        self.last_mask = Some(mask);
        tape.push("mask", &[v], value, Box::new(rule))
    }
}

/// Free-function form of [`MaskingLayer::forward`].
pub fn mask_forward(tape: &mut Tape, v: Var, layer: &mut MaskingLayer) -> Result<Var> {
    layer.forward(tape, v)
}

struct MaskBackward {
    keep: Vec<u8>,
    p: f64,
    mode: MaskMode,
    convention: ScalingConvention,
}

impl Backward for MaskBackward {
    fn name(&self) -> &'static str {
        "mask"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let g = match self.mode {
            MaskMode::Batch => {
                mask_backward_batch(ctx.grad_output, &self.keep, self.p, self.convention)?
            }
            MaskMode::Spatial => {
                mask_backward_spatial(ctx.grad_output, &self.keep, self.p, self.convention)?
            }
        };
        Ok(vec![Some(g)])
    }
}
