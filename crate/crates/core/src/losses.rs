//! Decomposable and non-decomposable losses.
//!
//! Each loss is a single fused tape op with a hand-written backward pass.

use crate::autodiff::{rule, sigmoid, Tape, Var};
use crate::backdrop::MaskingLayer;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A scalar loss on the tape plus its named components for logging.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: Var,
    pub breakdown: Vec<(String, f64)>,
}

impl LossValue {
    fn single(tape: &Tape, name: &str, value: Var) -> Result<Self> {
        let v = tape.value(value).item()?;
        Ok(LossValue {
            value,
            breakdown: vec![(name.to_string(), v)],
        })
    }

    pub fn item(&self, tape: &Tape) -> f64 {
        tape.value(self.value).data()[0]
    }
}

fn check_labels(op: &'static str, labels: &[usize], batch: usize, classes: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::Shape {
            op,
            lhs: vec![batch],
            rhs: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(
            op,
            format!("label {bad} out of range for {classes} classes"),
        ));
    }
    Ok(())
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn softmax_cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<LossValue> {
    let &[b, c] = tape.shape(logits) else {
        return Err(Error::invalid(
            "softmax_cross_entropy",
            format!("expected (B, C) logits, got {:?}", tape.shape(logits)),
        ));
    };
    check_labels("softmax_cross_entropy", labels, b, c)?;
    let z = tape.value(logits).data();
    let mut probs = vec![0.0; b * c];
    let mut total = 0.0;
    for n in 0..b {
        let row = &z[n * c..(n + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        total += log_z - row[labels[n]];
        for (p, v) in probs[n * c..(n + 1) * c].iter_mut().zip(row) {
            *p = (v - log_z).exp();
        }
    }
    let value = Tensor::scalar(total / b as f64);
    let labels = labels.to_vec();
    let var = tape.push(
        "softmax_cross_entropy",
        &[logits],
        value,
        rule("softmax_cross_entropy", move |ctx| {
            let g = ctx.grad_output.item()? / b as f64;
            let mut d = probs.clone();
            for (n, &l) in labels.iter().enumerate() {
                d[n * c + l] -= 1.0;
            }
            d.iter_mut().for_each(|v| *v *= g);
            Ok(vec![Some(Tensor::new(vec![b, c], d)?)])
        }),
    )?;
    LossValue::single(tape, "xe", var)
}

fn scores_len(tape: &Tape, scores: Var) -> Result<usize> {
    match *tape.shape(scores) {
        [n] | [n, 1] => Ok(n),
        ref s => Err(Error::invalid(
            "rank_statistic_loss",
            format!("expected (B) or (B, 1) scores, got {s:?}"),
        )),
    }
}

fn split_classes(op: &'static str, labels: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match l {
            1 => pos.push(i),
            0 => neg.push(i),
            other => {
                return Err(Error::invalid(op, format!("labels must be 0 or 1, got {other}")))
            }
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid(
            op,
            "batch holds a single class; use stratified batching so every batch has both",
        ));
    }
    Ok((pos, neg))
}

/// `1 - mean over (positive, negative) pairs of σ((s_pos - s_neg) / tau)`:
/// one minus a smoothed ROC AUC.
pub fn rank_statistic_loss(
    tape: &mut Tape,
    scores: Var,
    labels: &[usize],
    tau: f64,
) -> Result<LossValue> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::invalid("rank_statistic_loss", "tau must be positive"));
    }
    let n = scores_len(tape, scores)?;
    check_labels("rank_statistic_loss", labels, n, 2)?;
    let (pos, neg) = split_classes("rank_statistic_loss", labels)?;
    let s = tape.value(scores).data();
    let pairs = (pos.len() * neg.len()) as f64;
    let mut acc = 0.0;
    for &i in &pos {
        for &j in &neg {
            acc += sigmoid((s[i] - s[j]) / tau);
        }
    }
    let value = Tensor::scalar(1.0 - acc / pairs);
    let shape = tape.shape(scores).to_vec();
    let var = tape.push(
        "rank_statistic_loss",
        &[scores],
        value,
        rule("rank_statistic_loss", move |ctx| {
            let g = ctx.grad_output.item()?;
            let s = ctx.inputs[0].data();
            let k = g / (pairs * tau);
            let mut d = vec![0.0; s.len()];
            for &i in &pos {
                for &j in &neg {
                    let sg = sigmoid((s[i] - s[j]) / tau);
                    let w = k * sg * (1.0 - sg);
                    d[i] -= w;
                    d[j] += w;
                }
            }
            Ok(vec![Some(Tensor::new(shape.clone(), d)?)])
        }),
    )?;
    LossValue::single(tape, "rank", var)
}

/// Exact ROC AUC (Mann-Whitney), ties counted as one half.
pub fn roc_auc_exact(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            op: "roc_auc_exact",
            lhs: vec![scores.len()],
            rhs: vec![labels.len()],
        });
    }
    let (pos, neg) = split_classes("roc_auc_exact", labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Midranks (1-based) so tied groups share the average rank.
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    let np = pos.len() as f64;
    let rank_sum: f64 = pos.iter().map(|&k| ranks[k]).sum();
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * neg.len() as f64))
}

/// Per-class means of the rows of `v` for every class that occurs.
pub fn class_means(v: &[f64], dim: usize, labels: &[usize]) -> Vec<(usize, Vec<f64>, usize)> {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (row, &l) in v.chunks(dim).zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(row) {
            *s += x;
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(c, (s, n))| (c, s.into_iter().map(|x| x / n as f64).collect(), n))
        .collect()
}

/// `Σ_{c<c'} (‖v̄_c − v̄_c'‖² − d²)²` over the classes present.
pub fn latent_distance_value(v: &[f64], dim: usize, labels: &[usize], d: f64) -> f64 {
    let means = class_means(v, dim, labels);
    let mut total = 0.0;
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            let dist2: f64 = means[a].1.iter().zip(&means[b].1).map(|(x, y)| (x - y) * (x - y)).sum();
            total += (dist2 - d * d).powi(2);
        }
    }
    total
}

/// Centroid-separation loss on latent vectors `v` of shape `(B, D)`.
///
/// Class means are estimated from the batch; classes absent from the batch
/// are skipped, and with fewer than two classes present the loss is zero.
pub fn latent_distance_loss(tape: &mut Tape, v: Var, labels: &[usize], d: f64) -> Result<LossValue> {
    let &[b, dim] = tape.shape(v) else {
        return Err(Error::invalid(
            "latent_distance_loss",
            format!("expected (B, D) latents, got {:?}", tape.shape(v)),
        ));
    };
    if d.is_nan() || d <= 0.0 {
        return Err(Error::invalid("latent_distance_loss", "d must be positive"));
    }
    if labels.len() != b {
        return Err(Error::Shape {
            op: "latent_distance_loss",
            lhs: vec![b],
            rhs: vec![labels.len()],
        });
    }
    let data = tape.value(v).data();
    let means = class_means(data, dim, labels);
    if means.len() < 2 {
        log::warn!("latent distance loss: fewer than two classes in batch, loss is zero");
    }
    let value = Tensor::scalar(latent_distance_value(data, dim, labels, d));
    let labels = labels.to_vec();
    let var = tape.push(
        "latent_distance_loss",
        &[v],
        value,
        rule("latent_distance_loss", move |ctx| {
            let g = ctx.grad_output.item()?;
            let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
            // dL/dv̄_c, indexed by class id
            let mut dmean = vec![vec![0.0; dim]; classes];
            for a in 0..means.len() {
                for b in a + 1..means.len() {
                    let (ca, ma, _) = &means[a];
                    let (cb, mb, _) = &means[b];
                    let diff: Vec<f64> = ma.iter().zip(mb).map(|(x, y)| x - y).collect();
                    let dist2: f64 = diff.iter().map(|x| x * x).sum();
                    let k = 4.0 * (dist2 - d * d) * g;
                    for (k_dim, &df) in diff.iter().enumerate() {
                        dmean[*ca][k_dim] += k * df;
                        dmean[*cb][k_dim] -= k * df;
                    }
                }
            }
            let mut counts = vec![0usize; classes];
            for &l in &labels {
                counts[l] += 1;
            }
            let mut out = vec![0.0; b * dim];
            for (row, &l) in out.chunks_mut(dim).zip(&labels) {
                let inv = 1.0 / counts[l] as f64;
                for (o, &m) in row.iter_mut().zip(&dmean[l]) {
                    *o = m * inv;
                }
            }
            Ok(vec![Some(Tensor::new(vec![b, dim], out)?)])
        }),
    )?;
    LossValue::single(tape, "dist", var)
}

/// Cross-entropy on `f` plus latent distance on `v`, each behind its own
/// masking layer so the two terms see independent gradient masks.
pub fn composite_backdrop_loss(
    tape: &mut Tape,
    f: Var,
    v: Var,
    labels: &[usize],
    d: f64,
    mask_xe: &mut MaskingLayer,
    mask_dist: &mut MaskingLayer,
) -> Result<LossValue> {
    let fm = mask_xe.forward(tape, f)?;
    let vm = mask_dist.forward(tape, v)?;
    let xe = softmax_cross_entropy(tape, fm, labels)?;
    let dist = latent_distance_loss(tape, vm, labels, d)?;
    let value = tape.add(xe.value, dist.value)?;
    let mut breakdown = xe.breakdown;
    breakdown.extend(dist.breakdown);
    Ok(LossValue { value, breakdown })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backdrop::MaskMode;

    fn var(tape: &mut Tape, shape: &[usize], data: &[f64]) -> Var {
        tape.param(Tensor::new(shape.to_vec(), data.to_vec()).unwrap())
    }

    #[test]
    fn uniform_logits_give_ln_classes() {
        let mut tape = Tape::new();
        let z = var(&mut tape, &[2, 10], &[0.3; 20]);
        let l = softmax_cross_entropy(&mut tape, z, &[3, 9]).unwrap();
        assert!((l.item(&tape) - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_saturate() {
        let mut last = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 50.0] {
            let mut tape = Tape::new();
            let z = var(&mut tape, &[1, 3], &[margin, 0.0, 0.0]);
            let l = softmax_cross_entropy(&mut tape, z, &[0]).unwrap().item(&tape);
            assert!(l < last);
            last = l;
        }
        assert!(last < 1e-20);
    }

    #[test]
    fn out_of_range_label() {
        let mut tape = Tape::new();
        let z = var(&mut tape, &[1, 3], &[0.0; 3]);
        assert!(softmax_cross_entropy(&mut tape, z, &[3]).is_err());
    }

    #[test]
    fn rank_loss_examples() {
        let mut tape = Tape::new();
        let s = var(&mut tape, &[4], &[0.7; 4]);
        let l = rank_statistic_loss(&mut tape, s, &[1, 0, 0, 1], 1.0).unwrap();
        assert_eq!(l.item(&tape), 0.5);

        let s = var(&mut tape, &[2], &[10.0, -10.0]);
        let l = rank_statistic_loss(&mut tape, s, &[1, 0], 1.0).unwrap();
        assert!((l.item(&tape) - 2.061153618190204e-9).abs() < 1e-15);
    }

    #[test]
    fn rank_loss_rejects_single_class() {
        let mut tape = Tape::new();
        let s = var(&mut tape, &[3], &[0.0, 1.0, 2.0]);
        let err = rank_statistic_loss(&mut tape, s, &[1, 1, 1], 1.0).unwrap_err();
        assert!(err.to_string().contains("stratified"));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc_exact(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(roc_auc_exact(&[0.5; 5], &[1, 0, 1, 0, 0]).unwrap(), 0.5);
        assert!(roc_auc_exact(&[0.1, 0.2], &[0, 0]).is_err());
    }

    #[test]
    fn distance_loss_vanishes_at_target() {
        let mut tape = Tape::new();
        // class means (0, 0) and (0.6, 0.8): distance 1
        let v = var(&mut tape, &[4, 2], &[-0.1, 0.0, 0.1, 0.0, 0.6, 0.8, 0.6, 0.8]);
        let l = latent_distance_loss(&mut tape, v, &[0, 0, 1, 1], 1.0).unwrap();
        assert!(l.item(&tape).abs() < 1e-24);
    }

    #[test]
    fn distance_loss_single_class_is_zero() {
        let mut tape = Tape::new();
        let v = var(&mut tape, &[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let l = latent_distance_loss(&mut tape, v, &[2, 2], 1.0).unwrap();
        assert_eq!(l.item(&tape), 0.0);
        tape.backward(l.value).unwrap();
        assert!(tape.grad(v).unwrap().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn composite_forward_equals_unmasked_sum() {
        let mut tape = Tape::new();
        let f = var(&mut tape, &[4, 3], &[0.1, 0.5, -0.2, 1.0, 0.0, 0.3, -0.4, 0.2, 0.9, 0.0, 0.0, 0.1]);
        let v = var(&mut tape, &[4, 2], &[0.3, 0.1, -0.5, 0.4, 1.2, 0.7, 0.0, -0.3]);
        let labels = [0, 1, 2, 1];
        let mut mx = MaskingLayer::new(0.9, MaskMode::Batch, 1).unwrap();
        let mut md = MaskingLayer::new(0.7, MaskMode::Batch, 2).unwrap();
        let c = composite_backdrop_loss(&mut tape, f, v, &labels, 1.0, &mut mx, &mut md).unwrap();
        let xe = softmax_cross_entropy(&mut tape, f, &labels).unwrap().item(&tape);
        let dist = latent_distance_loss(&mut tape, v, &labels, 1.0).unwrap().item(&tape);
        assert_eq!(c.item(&tape), xe + dist);
    }
}
