use crate::autodiff::{rule, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::conv::output_extent;
use crate::tensor::Tensor;

/// Max pooling over `kernel × kernel` windows. The gradient goes to the
/// first (row-major) maximal element of each window.
pub fn max_pool2d(tape: &mut Tape, x: Var, kernel: usize, stride: usize) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let &[b, c, h, w] = xs.as_slice() else {
        return Err(Error::invalid(
            "maxpool",
            format!("expected (B, C, H, W), got {xs:?}"),
        ));
    };
    let (Some(ho), Some(wo)) = (
        output_extent(h, kernel, stride, 0),
        output_extent(w, kernel, stride, 0),
    ) else {
        return Err(Error::invalid(
            "maxpool",
            format!("window {kernel} stride {stride} does not fit {h}x{w}"),
        ));
    };
    let xv = tape.value(x).data();
    let mut out = Vec::with_capacity(b * c * ho * wo);
    let mut argmax = Vec::with_capacity(b * c * ho * wo);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..kernel {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for i in row..row + kernel {
                        if xv[i] > xv[best] {
                            best = i;
                        }
                    }
                }
                out.push(xv[best]);
                argmax.push(best);
            }
        }
    }
    let out = Tensor::new(vec![b, c, ho, wo], out)?;
    tape.push(
        "maxpool",
        &[x],
        out,
        rule("maxpool", move |ctx| {
            let mut dx = Tensor::zeros(&xs);
            let d = dx.data_mut();
            for (&src, &g) in argmax.iter().zip(ctx.grad_output.data()) {
                d[src] += g;
            }
            Ok(vec![Some(dx)])
        }),
    )
}

/// Mean over the spatial axes: `(B, C, H, W) -> (B, C)`.
pub fn global_avg_pool(tape: &mut Tape, x: Var) -> Result<Var> {
    if tape.shape(x).len() != 4 {
        return Err(Error::invalid(
            "global_avg_pool",
            format!("expected (B, C, H, W), got {:?}", tape.shape(x)),
        ));
    }
    tape.mean_axes(x, &[2, 3])
}

/// Row-wise softmax of `(B, C)` logits, outside the tape.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let &[_, c] = logits.shape() else {
        return Err(Error::invalid(
            "softmax",
            format!("expected (B, C), got {:?}", logits.shape()),
        ));
    };
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn average_of_constant_map() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 3, 4, 5], 1.75));
        let y = global_avg_pool(&mut tape, x).unwrap();
        assert_eq!(tape.shape(y), &[2, 3]);
        assert!(tape.value(y).data().iter().all(|&v| (v - 1.75).abs() < 1e-15));
    }

    #[test]
    fn maxpool_routes_to_first_maximum() {
        let mut tape = Tape::new();
        let x = tape.param(
            Tensor::new(vec![1, 1, 2, 4], vec![1.0, 5.0, 2.0, 2.0, 5.0, 0.0, 2.0, -1.0]).unwrap(),
        );
        let y = max_pool2d(&mut tape, x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, 2.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(
            tape.grad(x).unwrap().data(),
            &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn overlapping_windows_accumulate() {
        let mut tape = Tape::new();
        let x = tape.param(
            Tensor::new(vec![1, 1, 2, 3], vec![0.0, 9.0, 0.0, 0.0, 0.0, 0.0]).unwrap(),
        );
        let y = max_pool2d(&mut tape, x, 2, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[9.0, 9.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 1000.0, 0.0, -1000.0]).unwrap();
        let p = softmax(&t).unwrap();
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(p.data()[3] > 0.999);
    }
}
