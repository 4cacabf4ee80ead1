use crate::autodiff::{Backward, BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running mean and (unbiased) variance tracked in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }
    }
}

/// Splits `(B, C)` or `(B, C, H, W)` into (batch, channels, spatial).
fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [b, c] => Ok((b, c, 1)),
        [b, c, h, w] => Ok((b, c, h * w)),
        _ => Err(Error::invalid(
            "batchnorm",
            format!("expected (B, C) or (B, C, H, W), got {shape:?}"),
        )),
    }
}

/// Per-channel batch normalization.
///
/// In training mode the batch statistics normalize the input and `stats` is
/// updated with momentum [`BN_MOMENTUM`]; in evaluation mode `stats` is used
/// as is.
pub fn batch_norm(
    tape: &mut Tape,
    x: Var,
    scale: Var,
    shift: Var,
    stats: &mut RunningStats,
    training: bool,
) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let (b, c, s) = layout(&xs)?;
    for v in [scale, shift] {
        if tape.shape(v) != [c] {
            return Err(Error::Shape {
                op: "batchnorm",
                lhs: xs,
                rhs: tape.shape(v).to_vec(),
            });
        }
    }
    if training && b < 2 {
        return Err(Error::invalid(
            "batchnorm",
            "training mode needs a batch of at least 2",
        ));
    }
    let xv = tape.value(x).data();
    let m = b * s;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    if training {
        for ch in 0..c {
            let mut sum = 0.0;
            for n in 0..b {
                let base = (n * c + ch) * s;
                sum += xv[base..base + s].iter().sum::<f64>();
            }
            let mu = sum / m as f64;
            let mut sq = 0.0;
            for n in 0..b {
                let base = (n * c + ch) * s;
                sq += xv[base..base + s].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
            }
            mean[ch] = mu;
            var[ch] = sq / m as f64;
        }
        let unbias = m as f64 / (m as f64 - 1.0);
        for ch in 0..c {
            let rm = &mut stats.mean.data_mut()[ch];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean[ch];
            let rv = &mut stats.var.data_mut()[ch];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * var[ch] * unbias;
        }
    } else {
        mean.copy_from_slice(stats.mean.data());
        var.copy_from_slice(stats.var.data());
    }

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let gamma = tape.value(scale).data();
    let beta = tape.value(shift).data();
    let mut xhat = vec![0.0; xv.len()];
    let mut out = vec![0.0; xv.len()];
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * s;
            for i in base..base + s {
                let h = (xv[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                out[i] = gamma[ch] * h + beta[ch];
            }
        }
    }
    let out = Tensor::new(xs, out)?;
    tape.push(
        "batchnorm",
        &[x, scale, shift],
        out,
        Box::new(BatchNormBackward {
            xhat,
            inv_std,
            dims: (b, c, s),
            training,
        }),
    )
}

struct BatchNormBackward {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    dims: (usize, usize, usize),
    training: bool,
}

impl Backward for BatchNormBackward {
    fn name(&self) -> &'static str {
        "batchnorm"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (b, c, s) = self.dims;
        let m = (b * s) as f64;
        let g = ctx.grad_output.data();
        let gamma = ctx.inputs[1].data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for n in 0..b {
            for ch in 0..c {
                let base = (n * c + ch) * s;
                for (gi, xh) in g[base..base + s].iter().zip(&self.xhat[base..base + s]) {
                    dgamma[ch] += gi * xh;
                    dbeta[ch] += gi;
                }
            }
        }
        let dx = ctx.needs_grad[0].then(|| {
            let mut dx = vec![0.0; g.len()];
            for n in 0..b {
                for ch in 0..c {
                    let base = (n * c + ch) * s;
                    let k = gamma[ch] * self.inv_std[ch];
                    for i in base..base + s {
                        dx[i] = if self.training {
                            k * (g[i] - dbeta[ch] / m - self.xhat[i] * dgamma[ch] / m)
                        } else {
                            k * g[i]
                        };
                    }
                }
            }
            dx
        });
        Ok(vec![
            dx.map(|d| Tensor::new(ctx.inputs[0].shape().to_vec(), d)).transpose()?,
            Some(Tensor::new(vec![c], dgamma)?),
            Some(Tensor::new(vec![c], dbeta)?),
        ])
    }
}
