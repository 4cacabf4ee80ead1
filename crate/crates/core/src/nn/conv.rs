use crate::autodiff::{Backward, BackwardCtx, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm_acc, gemm_tn_acc, Tensor};

/// Output extent of a convolution or pooling window along one axis, or
/// `None` when the window does not fit.
pub fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Input offset (within one sample) read by tap `(ci, ky, kx)` at output
    /// position `(oy, ox)`, or `None` inside the zero padding.
    #[inline]
    fn source(&self, ci: usize, ky: usize, kx: usize, oy: usize, ox: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.padding)?;
        let ix = (ox * self.stride + kx).checked_sub(self.padding)?;
        if iy >= self.h || ix >= self.w {
            return None;
        }
        Some((ci * self.h + iy) * self.w + ix)
    }

    fn taps(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.cin).flat_map(move |ci| {
            (0..self.kh).flat_map(move |ky| (0..self.kw).map(move |kx| (ci, ky, kx)))
        })
    }

    /// `K × P` patch matrix of one sample.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let (k, p) = (self.k(), self.positions());
        let mut col = vec![0.0; k * p];
        for ((ci, ky, kx), row) in self.taps().zip(col.chunks_mut(p)) {
            for oy in 0..self.ho {
                let Some(iy) = (oy * self.stride + ky).checked_sub(self.padding) else {
                    continue;
                };
                if iy >= self.h {
                    continue;
                }
                let src_row = &x[(ci * self.h + iy) * self.w..(ci * self.h + iy + 1) * self.w];
                let dst = &mut row[oy * self.wo..(oy + 1) * self.wo];
                for (ox, v) in dst.iter_mut().enumerate() {
                    if let Some(ix) = (ox * self.stride + kx).checked_sub(self.padding) {
                        if ix < self.w {
                            *v = src_row[ix];
                        }
                    }
                }
            }
        }
        col
    }

    /// `P' × K` patch matrix restricted to the listed positions.
    fn im2col_t(&self, x: &[f64], positions: &[usize]) -> Vec<f64> {
        let k = self.k();
        let mut col = vec![0.0; positions.len() * k];
        for (row, &pi) in col.chunks_mut(k).zip(positions) {
            let (oy, ox) = (pi / self.wo, pi % self.wo);
            for ((ci, ky, kx), v) in self.taps().zip(row.iter_mut()) {
                if let Some(src) = self.source(ci, ky, kx, oy, ox) {
                    *v = x[src];
                }
            }
        }
        col
    }

    /// Scatters a `K × P'` column gradient back onto one sample's input.
    fn col2im(&self, dcol: &[f64], positions: &[usize], dx: &mut [f64]) {
        let np = positions.len();
        let coords: Vec<(usize, usize)> =
            positions.iter().map(|&pi| (pi / self.wo, pi % self.wo)).collect();
        for (ki, (ci, ky, kx)) in self.taps().enumerate() {
            let row = &dcol[ki * np..(ki + 1) * np];
            for (&(oy, ox), &g) in coords.iter().zip(row) {
                if let Some(src) = self.source(ci, ky, kx, oy, ox) {
                    dx[src] += g;
                }
            }
        }
    }
}

/// 2-D cross-correlation of `(B, Cin, H, W)` input with `(Cout, Cin, kh, kw)`
/// weights, plus an optional per-channel bias.
pub fn conv2d(
    tape: &mut Tape,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let ws = tape.shape(weight).to_vec();
    let (&[b, cin, h, w], &[cout, wcin, kh, kw]) = (xs.as_slice(), ws.as_slice()) else {
        return Err(Error::Shape {
            op: "conv2d",
            lhs: xs,
            rhs: ws,
        });
    };
    if cin != wcin {
        return Err(Error::Shape {
            op: "conv2d",
            lhs: xs,
            rhs: ws,
        });
    }
    if let Some(bv) = bias {
        if tape.shape(bv) != [cout] {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: vec![cout],
                rhs: tape.shape(bv).to_vec(),
            });
        }
    }
    let (Some(ho), Some(wo)) = (
        output_extent(h, kh, stride, padding),
        output_extent(w, kw, stride, padding),
    ) else {
        return Err(Error::invalid(
            "conv2d",
            format!("kernel {kh}x{kw} stride {stride} padding {padding} does not fit input {h}x{w}"),
        ));
    };
    let geo = Geometry {
        cin,
        h,
        w,
        kh,
        kw,
        ho,
        wo,
        stride,
        padding,
    };

    let (k, p) = (geo.k(), geo.positions());
    let xv = tape.value(x).data();
    let wv = tape.value(weight).data();
    let bv = bias.map(|v| tape.value(v).data().to_vec());
    let in_len = cin * h * w;
    let mut out = vec![0.0; b * cout * p];
    for n in 0..b {
        let col = geo.im2col(&xv[n * in_len..(n + 1) * in_len]);
        let dst = &mut out[n * cout * p..(n + 1) * cout * p];
        if let Some(bias) = &bv {
            for (row, &bc) in dst.chunks_mut(p).zip(bias) {
                row.fill(bc);
            }
        }
        gemm_acc(cout, k, p, wv, &col, dst);
    }
    let out = Tensor::new(vec![b, cout, ho, wo], out)?;

    let mut inputs = vec![x, weight];
    inputs.extend(bias);
    tape.push(
        "conv2d",
        &inputs,
        out,
        Box::new(ConvBackward {
            geo,
            batch: b,
            cout,
        }),
    )
}

struct ConvBackward {
    geo: Geometry,
    batch: usize,
    cout: usize,
}

impl Backward for ConvBackward {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let geo = &self.geo;
        let (k, p, cout) = (geo.k(), geo.positions(), self.cout);
        let x = ctx.inputs[0].data();
        let wt = ctx.inputs[1].data();
        let g = ctx.grad_output.data();
        let in_len = geo.cin * geo.h * geo.w;
        let has_bias = ctx.inputs.len() == 3;

        let mut dx = ctx.needs_grad[0].then(|| vec![0.0; x.len()]);
        let mut dw = ctx.needs_grad[1].then(|| vec![0.0; cout * k]);
        let mut db = (has_bias && ctx.needs_grad[2]).then(|| vec![0.0; cout]);
        let all: Vec<usize> = (0..p).collect();

        for n in 0..self.batch {
            let gn = &g[n * cout * p..(n + 1) * cout * p];
            if let Some(db) = &mut db {
                for (acc, row) in db.iter_mut().zip(gn.chunks(p)) {
                    *acc += row.iter().sum::<f64>();
                }
            }

            // Positions whose gradient is zero in every channel contribute
            // nothing; with skipping enabled they are left out entirely.
            let (positions, g_cols) = if ctx.skip_blocked {
                let active: Vec<usize> = (0..p)
                    .filter(|&pi| (0..cout).any(|c| gn[c * p + pi] != 0.0))
                    .collect();
                if active.is_empty() {
                    continue;
                }
                let mut packed = vec![0.0; cout * active.len()];
                for c in 0..cout {
                    for (j, &pi) in active.iter().enumerate() {
                        packed[c * active.len() + j] = gn[c * p + pi];
                    }
                }
                (active, packed)
            } else {
                (all.clone(), gn.to_vec())
            };
            let np = positions.len();
            let xn = &x[n * in_len..(n + 1) * in_len];

            if let Some(dw) = &mut dw {
                let col_t = geo.im2col_t(xn, &positions);
                gemm_acc(cout, np, k, &g_cols, &col_t, dw);
            }
            if let Some(dx) = &mut dx {
                let mut dcol = vec![0.0; k * np];
                gemm_tn_acc(k, cout, np, wt, &g_cols, &mut dcol);
                geo.col2im(&dcol, &positions, &mut dx[n * in_len..(n + 1) * in_len]);
            }
        }

        let mut grads = vec![
            dx.map(|d| Tensor::new(ctx.inputs[0].shape().to_vec(), d)).transpose()?,
            dw.map(|d| Tensor::new(ctx.inputs[1].shape().to_vec(), d)).transpose()?,
        ];
        if has_bias {
            grads.push(db.map(|d| Tensor::new(vec![cout], d)).transpose()?);
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extent_formula() {
        assert_eq!(output_extent(128, 3, 1, 1), Some(128));
        assert_eq!(output_extent(8, 3, 1, 0), Some(6));
        assert_eq!(output_extent(32, 3, 2, 1), Some(16));
        assert_eq!(output_extent(2, 3, 1, 0), None);
    }

    #[test]
    fn identity_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 1, 1], vec![4.5]).unwrap());
        let w = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = conv2d(&mut tape, x, w, Some(b), 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[4.5]);
    }

    #[test]
    fn all_ones_kernel_sums_patch() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
        let y = conv2d(&mut tape, x, w, None, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[10.0]);
    }

    #[test]
    fn padding_and_stride_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[2, 3, 7, 5]));
        let w = tape.constant(Tensor::ones(&[4, 3, 3, 3]));
        let y = conv2d(&mut tape, x, w, None, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[2, 4, 4, 3]);
        // Corner output sees a 2x2 window of ones in each of 3 channels.
        assert_eq!(tape.value(y).data()[0], 12.0);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 2, 3, 3]));
        let w = tape.constant(Tensor::ones(&[1, 3, 3, 3]));
        assert!(matches!(conv2d(&mut tape, x, w, None, 1, 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn kernel_larger_than_input_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
        let w = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        assert!(conv2d(&mut tape, x, w, None, 1, 0).is_err());
    }
}
