// Elementwise, reduction and shape ops on the tape.

use super::{rule, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

/// How two operand shapes combine. Only scalar expansion and trailing-axis
/// expansion are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// `rhs` repeats over the leading axes of `lhs`.
    Rhs,
    /// `lhs` repeats over the leading axes of `rhs`.
    Lhs,
}

fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Broadcast, Vec<usize>)> {
    if a == b {
        return Ok((Broadcast::Same, a.to_vec()));
    }
    let a_n: usize = a.iter().product();
    let b_n: usize = b.iter().product();
    if b_n == 1 && b.len() <= a.len() || b.len() < a.len() && a.ends_with(b) {
        return Ok((Broadcast::Rhs, a.to_vec()));
    }
    if a_n == 1 && a.len() <= b.len() || a.len() < b.len() && b.ends_with(a) {
        return Ok((Broadcast::Lhs, b.to_vec()));
    }
    Err(Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    })
}

/// Sums a full-size gradient down to a periodically repeated operand.
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    if n == g.numel() {
        return Tensor::new(shape.to_vec(), g.data().to_vec()).expect("same size");
    }
    let mut out = vec![0.0; n];
    for chunk in g.data().chunks(n) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::new(shape.to_vec(), out).expect("reduced size")
}

fn zip_broadcast(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let (an, bn) = (ad.len(), bd.len());
    let data = (0..n).map(|i| f(ad[i % an], bd[i % bn])).collect();
    Tensor::new(shape, data).expect("broadcast shape")
}

/// Maps every flat index of `shape` to its flat index after summing out
/// `axes` (kept as size-1 axes).
fn reduction_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut out_shape = shape.to_vec();
    for &ax in axes {
        out_shape[ax] = 1;
    }
    let n: usize = shape.iter().product();
    let mut map = vec![0usize; n];
    let mut idx = vec![0usize; shape.len()];
    for slot in map.iter_mut() {
        let mut flat = 0;
        for (d, &i) in idx.iter().enumerate() {
            flat = flat * out_shape[d] + if out_shape[d] == 1 { 0 } else { i };
        }
        *slot = flat;
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (map, out_shape)
}

/// Splits `shape` around `axis` into (outer, extent, inner) sizes.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        // (grad_out, a, b) -> (da, db), both full size
        df: fn(f64, f64, f64) -> (f64, f64),
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (_, shape) = broadcast(op, va.shape(), vb.shape())?;
        let out = zip_broadcast(va, vb, shape, f);
        let (a_shape, b_shape) = (va.shape().to_vec(), vb.shape().to_vec());
        self.push(
            op,
            &[a, b],
            out,
            rule(op, move |ctx| {
                let (ta, tb) = (ctx.inputs[0], ctx.inputs[1]);
                let g = ctx.grad_output;
                let (ad, bd) = (ta.data(), tb.data());
                let (an, bn) = (ad.len(), bd.len());
                let mut da = Vec::with_capacity(g.numel());
                let mut db = Vec::with_capacity(g.numel());
                for (i, &gi) in g.data().iter().enumerate() {
                    let (x, y) = df(gi, ad[i % an], bd[i % bn]);
                    da.push(x);
                    db.push(y);
                }
                let da = Tensor::new(g.shape().to_vec(), da)?;
                let db = Tensor::new(g.shape().to_vec(), db)?;
                Ok(vec![
                    ctx.needs_grad[0].then(|| reduce_to(&da, &a_shape)),
                    ctx.needs_grad[1].then(|| reduce_to(&db, &b_shape)),
                ])
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |g, _, _| (g, g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |g, _, _| (g, -g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |g, x, y| (g * y, g * x))
    }

    fn unary(
        &mut self,
        op: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        // (grad_out, input, output) -> grad_in
        df: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Result<Var> {
        let out = self.value(x).map(f);
        self.push(
            op,
            &[x],
            out,
            rule(op, move |ctx| {
                let g = ctx.grad_output;
                let data = g
                    .data()
                    .iter()
                    .zip(ctx.inputs[0].data())
                    .zip(ctx.output.data())
                    .map(|((&gi, &xi), &yi)| df(gi, xi, yi))
                    .collect();
                Ok(vec![Some(Tensor::new(g.shape().to_vec(), data)?)])
            }),
        )
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", x, move |v| v + c, |g, _, _| g)
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("mul_scalar", x, move |v| v * c, move |g, _, _| g * c)
    }

    /// `x^e` elementwise.
    pub fn powf(&mut self, x: Var, e: f64) -> Result<Var> {
        self.unary(
            "pow",
            x,
            move |v| v.powf(e),
            move |g, x, _| g * e * x.powf(e - 1.0),
        )
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, |g, _, y| g * y)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::invalid("log", "input must be positive"));
        }
        self.unary("log", x, f64::ln, |g, x, _| g / x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, |g, _, y| g * y * (1.0 - y))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(
            "relu",
            x,
            |v| if v > 0.0 { v } else { 0.0 },
            |g, x, _| if x > 0.0 { g } else { 0.0 },
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape().to_vec();
        let out = Tensor::scalar(v.sum());
        self.push(
            "sum",
            &[x],
            out,
            rule("sum", move |ctx| {
                let g = ctx.grad_output.item()?;
                Ok(vec![Some(Tensor::full(&shape, g))])
            }),
        )
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x)?;
        self.mul_scalar(s, 1.0 / n)
    }

    fn reduce_axes(&mut self, op: &'static str, x: Var, axes: &[usize], mean: bool) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape().to_vec();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if let Some(&bad) = axes.iter().find(|&&a| a >= shape.len()) {
            return Err(Error::invalid(
                op,
                format!("axis {bad} out of range for shape {shape:?}"),
            ));
        }
        let (map, kept) = reduction_map(&shape, &axes);
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        let scale = if mean { 1.0 / count as f64 } else { 1.0 };
        let out_n: usize = kept.iter().product();
        let mut out = vec![0.0; out_n];
        for (&o, &val) in map.iter().zip(v.data()) {
            out[o] += val;
        }
        if mean {
            out.iter_mut().for_each(|o| *o *= scale);
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .filter(|(d, _)| !axes.contains(d))
            .map(|(_, &s)| s)
            .collect();
        let out = Tensor::new(out_shape, out)?;
        self.push(
            op,
            &[x],
            out,
            rule(op, move |ctx| {
                let g = ctx.grad_output.data();
                let data = map.iter().map(|&o| g[o] * scale).collect();
                Ok(vec![Some(Tensor::new(shape.clone(), data)?)])
            }),
        )
    }

    /// Sums over `axes`, dropping them from the shape.
    pub fn sum_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce_axes("sum_axes", x, axes, false)
    }

    pub fn mean_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.reduce_axes("mean_axes", x, axes, true)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let in_shape = v.shape().to_vec();
        let out = v.clone().reshape(shape.to_vec())?;
        self.push(
            "reshape",
            &[x],
            out,
            rule("reshape", move |ctx| {
                Ok(vec![Some(ctx.grad_output.clone().reshape(in_shape.clone())?)])
            }),
        )
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape().to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{end} on axis {axis} invalid for shape {shape:?}"),
            ));
        }
        let (outer, extent, inner) = split_axis(&shape, axis);
        let width = (end - start) * inner;
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let base = o * extent * inner + start * inner;
            data.extend_from_slice(&v.data()[base..base + width]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = end - start;
        let out = Tensor::new(out_shape, data)?;
        self.push(
            "slice",
            &[x],
            out,
            rule("slice", move |ctx| {
                let g = ctx.grad_output.data();
                let mut full = Tensor::zeros(&shape);
                let fd = full.data_mut();
                for o in 0..outer {
                    let base = o * extent * inner + start * inner;
                    fd[base..base + width].copy_from_slice(&g[o * width..(o + 1) * width]);
                }
                Ok(vec![Some(full)])
            }),
        )
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base_shape = self.value(*first).shape().to_vec();
        if axis >= base_shape.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range")));
        }
        let mut extents = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.value(x).shape();
            let compatible = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base_shape,
                    rhs: s.to_vec(),
                });
            }
            extents.push(s[axis]);
        }
        let (outer, _, inner) = split_axis(&base_shape, axis);
        let total: usize = extents.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&x, &e) in xs.iter().zip(&extents) {
                let d = self.value(x).data();
                data.extend_from_slice(&d[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let mut out_shape = base_shape.clone();
        out_shape[axis] = total;
        let out = Tensor::new(out_shape, data)?;
        let shapes: Vec<Vec<usize>> = xs.iter().map(|&x| self.value(x).shape().to_vec()).collect();
        self.push(
            "concat",
            xs,
            out,
            rule("concat", move |ctx| {
                let g = ctx.grad_output.data();
                let mut parts: Vec<Vec<f64>> = extents
                    .iter()
                    .map(|&e| Vec::with_capacity(outer * e * inner))
                    .collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (part, &e) in parts.iter_mut().zip(&extents) {
                        part.extend_from_slice(&g[pos..pos + e * inner]);
                        pos += e * inner;
                    }
                }
                parts
                    .into_iter()
                    .zip(&shapes)
                    .map(|(p, s)| Tensor::new(s.clone(), p).map(Some))
                    .collect()
            }),
        )
    }

    /// `(m×k) · (k×n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ndim() != 2 || vb.ndim() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(m, k, n, va.data(), vb.data(), &mut out);
        let out = Tensor::new(vec![m, n], out)?;
        self.push(
            "matmul",
            &[a, b],
            out,
            rule("matmul", move |ctx| {
                let g = ctx.grad_output.data();
                let (ta, tb) = (ctx.inputs[0], ctx.inputs[1]);
                let da = ctx.needs_grad[0].then(|| {
                    let mut d = vec![0.0; m * k];
                    gemm_nt_acc(m, n, k, g, tb.data(), &mut d);
                    Tensor::new(vec![m, k], d).expect("shape")
                });
                let db = ctx.needs_grad[1].then(|| {
                    let mut d = vec![0.0; k * n];
                    gemm_tn_acc(k, m, n, ta.data(), g, &mut d);
                    Tensor::new(vec![k, n], d).expect("shape")
                });
                Ok(vec![da, db])
            }),
        )
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
