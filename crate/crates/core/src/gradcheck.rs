//! Finite-difference verification of backward rules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::losses;
use crate::nn::{batch_norm, conv2d, global_avg_pool, max_pool2d, RunningStats};
use crate::tensor::Tensor;

/// Largest relative error accepted by [`run_suite`].
pub const TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const EPS: f64 = 1e-6;
/// Entries where both gradients are below this magnitude count as agreeing.
const FLOOR: f64 = 1e-8;

/// Central-difference gradient of a scalar function.
pub fn finite_diff(x: &Tensor, eps: f64, mut f: impl FnMut(&Tensor) -> Result<f64>) -> Result<Tensor> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros_like(x);
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite { op: "finite_diff" });
        }
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    Ok(grad)
}

/// Elementwise `|a - n| / (|a| + |n|)`, maximized; pairs that are both
/// negligibly small are skipped.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| {
            let scale = a.abs() + n.abs();
            if scale < FLOOR {
                0.0
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Compares tape gradients of `f` against central differences for every
/// input, returning the worst relative error.
pub fn check<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros_like(x));
        let numeric = finite_diff(x, EPS, |probe| {
            let mut t = Tape::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, v)| t.constant(if j == k { probe.clone() } else { v.clone() }))
                .collect();
            let out = f(&mut t, &vs)?;
            t.value(out).item()
        })?;
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// One row of the suite's report.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub op: &'static str,
    pub instance: usize,
    pub max_rel_error: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Number of random instances per op in [`run_suite`].
pub const INSTANCES: usize = 5;

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches length")
}

/// Reduces a tensor output to a scalar through a fixed random weighting, so
/// every output element contributes a distinct amount to the gradient.
fn project(tape: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type CaseFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn case(op: &'static str, rng: &mut ChaCha8Rng, instance: usize) -> (Vec<Tensor>, CaseFn) {
    match op {
        "conv2d" => {
            let (stride, pad) = [(1, 1), (2, 0), (1, 0), (2, 1), (3, 2)][instance % 5];
            let cin = rng.random_range(1..=3);
            let cout = rng.random_range(1..=3);
            let k = rng.random_range(1..=3);
            let h = rng.random_range(k + 1..k + 5);
            let w = rng.random_range(k + 1..k + 5);
            let x = normal(rng, &[2, cin, h, w]);
            let wt = normal(rng, &[cout, cin, k, k]);
            let b = normal(rng, &[cout]);
            let ho = (h + 2 * pad - k) / stride + 1;
            let wo = (w + 2 * pad - k) / stride + 1;
            let proj = normal(rng, &[2, cout, ho, wo]);
            (
                vec![x, wt, b],
                Box::new(move |t, v| {
                    let y = conv2d(t, v[0], v[1], Some(v[2]), stride, pad)?;
                    project(t, y, &proj)
                }),
            )
        }
        "batchnorm" => {
            let training = instance != 4;
            let shape: Vec<usize> = if instance.is_multiple_of(2) { vec![4, 3, 2, 3] } else { vec![5, 3] };
            let x = normal(rng, &shape);
            let scale = normal(rng, &[3]);
            let shift = normal(rng, &[3]);
            let mut stats = RunningStats::new(3);
            for v in stats.var.data_mut() {
                *v = rng.random_range(0.5..2.0);
            }
            let proj = normal(rng, &shape);
            (
                vec![x, scale, shift],
                Box::new(move |t, v| {
                    let mut s = stats.clone();
                    let y = batch_norm(t, v[0], v[1], v[2], &mut s, training)?;
                    project(t, y, &proj)
                }),
            )
        }
        "relu" => {
            // keep inputs away from the kink
            let x = normal(rng, &[3, 7]).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
            let proj = normal(rng, &[3, 7]);
            (
                vec![x],
                Box::new(move |t, v| {
                    let y = t.relu(v[0])?;
                    project(t, y, &proj)
                }),
            )
        }
        "maxpool" => {
            let (k, s) = [(2, 2), (2, 1), (3, 1), (3, 2), (2, 2)][instance % 5];
            let x = normal(rng, &[2, 2, 6, 5]);
            let ho = (6 - k) / s + 1;
            let wo = (5 - k) / s + 1;
            let proj = normal(rng, &[2, 2, ho, wo]);
            (
                vec![x],
                Box::new(move |t, v| {
                    let y = max_pool2d(t, v[0], k, s)?;
                    project(t, y, &proj)
                }),
            )
        }
        "avgpool" => {
            let x = normal(rng, &[2, 3, 4, 5]);
            let proj = normal(rng, &[2, 3]);
            (
                vec![x],
                Box::new(move |t, v| {
                    let y = global_avg_pool(t, v[0])?;
                    project(t, y, &proj)
                }),
            )
        }
        "softmax_xe" => {
            let c = rng.random_range(2..=6);
            let b = rng.random_range(1..=5);
            let x = normal(rng, &[b, c]).map(|v| 3.0 * v);
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
            (
                vec![x],
                Box::new(move |t, v| Ok(losses::softmax_cross_entropy(t, v[0], &labels)?.value)),
            )
        }
        "rank" => {
            let n = rng.random_range(3..=10);
            let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            labels[0] = 1;
            labels[1] = 0;
            let tau = [1.0, 0.5, 2.0, 1.0, 0.3][instance % 5];
            let x = normal(rng, &[n]);
            (
                vec![x],
                Box::new(move |t, v| Ok(losses::rank_statistic_loss(t, v[0], &labels, tau)?.value)),
            )
        }
        "distance" => {
            let n = rng.random_range(4..=9);
            let dim = rng.random_range(1..=4);
            let classes = rng.random_range(2..=3);
            let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
            let x = normal(rng, &[n, dim]);
            let d = rng.random_range(0.5..2.0);
            (
                vec![x],
                Box::new(move |t, v| Ok(losses::latent_distance_loss(t, v[0], &labels, d)?.value)),
            )
        }
        other => unreachable!("no gradcheck case for {other}"),
    }
}

/// The ops covered by [`run_suite`].
pub const SUITE_OPS: [&str; 8] = [
    "conv2d",
    "batchnorm",
    "relu",
    "maxpool",
    "avgpool",
    "softmax_xe",
    "rank",
    "distance",
];

/// Checks every op in [`SUITE_OPS`] on [`INSTANCES`] random instances.
pub fn run_suite(seed: u64) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for (k, op) in SUITE_OPS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        for instance in 0..INSTANCES {
            let (inputs, f) = case(op, &mut rng, instance);
            let max_rel_error = check(&inputs, f)?;
            out.push(CaseResult {
                op,
                instance,
                max_rel_error,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_of_quadratic() {
        let x = Tensor::from_vec(vec![1.0, -2.0, 0.5]);
        let g = finite_diff(&x, 1e-5, |t| Ok(t.data().iter().map(|v| v * v).sum())).unwrap();
        for (gi, xi) in g.data().iter().zip(x.data()) {
            assert!((gi - 2.0 * xi).abs() < 1e-8);
        }
    }

    #[test]
    fn non_finite_function_is_an_error() {
        let x = Tensor::from_vec(vec![0.0]);
        assert!(finite_diff(&x, 1e-5, |_| Ok(f64::NAN)).is_err());
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        let err = check(&[x], |t, v| {
            // value is sum(x), but the recorded rule doubles the gradient
            let y = t.mul_scalar(v[0], 2.0)?;
            let s = t.sum(y)?;
            let half = t.value(s).item()? / 2.0;
            let c = t.constant(Tensor::scalar(half));
            let neg = t.mul_scalar(s, -0.5)?;
            let z = t.add(neg, c)?;
            t.add(z, s)
        })
        .unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn suite_passes() {
        let results = run_suite(0).unwrap();
        assert_eq!(results.len(), SUITE_OPS.len() * INSTANCES);
        for r in &results {
            assert!(r.passed(), "{r:?}");
        }
    }
}
