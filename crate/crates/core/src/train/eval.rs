//! Test-set metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::sigmoid;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::{scale_labels, GpClassSpec};
use crate::losses::{latent_distance_value, roc_auc_exact};
use crate::nn::{softmax, ModelState};
use crate::tensor::Tensor;
use crate::train::config::LossKind;

/// Samples per evaluation forward pass.
const EVAL_CHUNK: usize = 16;

/// What to measure on a test set.
#[derive(Debug, Clone)]
pub struct EvalTask {
    pub loss: LossKind,
    pub tau: f64,
    pub d: f64,
    /// Class grid for scale-specific accuracy, when the task has one.
    pub gp_classes: Option<Vec<GpClassSpec>>,
    /// Batch size for the batch-averaged distance loss.
    pub batch_size: usize,
    pub seed: u64,
}

/// Runs the model in evaluation mode over the whole dataset, returning the
/// outputs and the inputs of the last parameterized layer.
pub fn infer_all(model: &mut ModelState, ds: &Dataset) -> Result<(Tensor, Tensor)> {
    let shape = model.input_shape();
    if ds.sample_shape() != shape {
        return Err(Error::Shape {
            op: "evaluate",
            lhs: ds.sample_shape().to_vec(),
            rhs: shape.to_vec(),
        });
    }
    let mut outs = Vec::new();
    let mut lats = Vec::new();
    let (mut out_inner, mut lat_inner) = (Vec::new(), Vec::new());
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let (x, _) = ds.batch(chunk);
        let (o, l) = model.infer(&x)?;
        out_inner = o.shape()[1..].to_vec();
        lat_inner = l.shape()[1..].to_vec();
        outs.extend_from_slice(o.data());
        lats.extend_from_slice(l.data());
    }
    let n = ds.len();
    let with_batch = |inner: Vec<usize>| [vec![n], inner].concat();
    Ok((
        Tensor::new(with_batch(out_inner), outs)?,
        Tensor::new(with_batch(lat_inner), lats)?,
    ))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose largest logit is the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let c = logits.shape()[1];
    let hits = logits
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    hits as f64 / labels.len() as f64
}

/// Total, short-scale and long-scale accuracy on a factorial class grid.
pub fn scale_accuracies(logits: &Tensor, labels: &[usize], classes: &[GpClassSpec]) -> Result<(f64, f64, f64)> {
    let c = logits.shape()[1];
    let (mut total, mut small, mut large) = (0usize, 0usize, 0usize);
    for (row, &l) in logits.data().chunks(c).zip(labels) {
        let pred = argmax(row);
        let (ps, pl) = scale_labels(pred as u16, classes)?;
        let (ts, tl) = scale_labels(l as u16, classes)?;
        total += usize::from(pred == l);
        small += usize::from(ps == ts);
        large += usize::from(pl == tl);
    }
    let n = labels.len() as f64;
    Ok((total as f64 / n, small as f64 / n, large as f64 / n))
}

/// Mean cross-entropy computed outside the tape.
pub fn mean_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let p = softmax(logits)?;
    let c = logits.shape()[1];
    let total: f64 = p
        .data()
        .chunks(c)
        .zip(labels)
        .map(|(row, &l)| -row[l].max(f64::MIN_POSITIVE).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// `1 − mean σ((s_pos − s_neg)/tau)` over all pairs, outside the tape.
pub fn rank_statistic_value(scores: &[f64], labels: &[usize], tau: f64) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 0).map(|(s, _)| *s).collect();
    let mut acc = 0.0;
    for &p in &pos {
        for &n in &neg {
            acc += sigmoid((p - n) / tau);
        }
    }
    1.0 - acc / (pos.len() * neg.len()) as f64
}

/// Mean of the latent distance loss over consecutive batches of a seeded
/// permutation, as seen by a minibatch estimator.
pub fn batch_averaged_distance(latent: &Tensor, labels: &[usize], d: f64, batch: usize, seed: u64) -> f64 {
    let dim = latent.shape()[1];
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let batches: Vec<&[usize]> = order.chunks(batch).collect();
    let total: f64 = batches
        .iter()
        .map(|b| {
            let v = latent.select_leading(b);
            let l: Vec<usize> = b.iter().map(|&i| labels[i]).collect();
            latent_distance_value(v.data(), dim, &l, d)
        })
        .sum();
    total / batches.len() as f64
}

/// Task-appropriate test metrics as `(name, value)` pairs.
pub fn evaluate(model: &mut ModelState, ds: &Dataset, task: &EvalTask) -> Result<Vec<(String, f64)>> {
    let (out, latent) = infer_all(model, ds)?;
    let labels = &ds.labels;
    let mut m = Vec::new();
    match task.loss {
        LossKind::Rank => {
            let scores = out.data();
            if scores.len() != labels.len() {
                return Err(Error::invalid("evaluate", "rank task needs one score per sample"));
            }
            m.push(("loss".into(), rank_statistic_value(scores, labels, task.tau)));
            m.push(("auc".into(), roc_auc_exact(scores, labels)?));
        }
        LossKind::Xe | LossKind::Composite => {
            let xe = mean_cross_entropy(&out, labels)?;
            m.push(("accuracy".into(), accuracy(&out, labels)));
            if let Some(classes) = &task.gp_classes {
                let (_, small, large) = scale_accuracies(&out, labels, classes)?;
                m.push(("accuracy_small".into(), small));
                m.push(("accuracy_large".into(), large));
            }
            if task.loss == LossKind::Composite {
                let dim = latent.shape()[1];
                let full = latent_distance_value(latent.data(), dim, labels, task.d);
                let batched = batch_averaged_distance(&latent, labels, task.d, task.batch_size, task.seed);
                m.push(("loss".into(), xe + full));
                m.push(("xe".into(), xe));
                m.push(("dist_dataset".into(), full));
                m.push(("dist_batch_avg".into(), batched));
            } else {
                m.push(("loss".into(), xe));
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictor_scores_full_marks() {
        let classes = crate::gp::desk_classes();
        let labels = vec![0, 1, 2, 3, 2];
        let mut logits = Tensor::zeros(&[5, 4]);
        for (i, &l) in labels.iter().enumerate() {
            logits.data_mut()[i * 4 + l] = 5.0;
        }
        assert_eq!(scale_accuracies(&logits, &labels, &classes).unwrap(), (1.0, 1.0, 1.0));
    }

    #[test]
    fn wrong_class_can_still_get_one_scale_right() {
        let classes = crate::gp::desk_classes();
        // true class 0 = (short 0, long 0); predicted 1 = (short 1, long 0)
        let logits = Tensor::new(vec![1, 4], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(scale_accuracies(&logits, &[0], &classes).unwrap(), (0.0, 0.0, 1.0));
    }

    #[test]
    fn dataset_distance_by_hand() {
        // class 0 mean (1, 0), class 1 mean (0, 2): squared distance 5
        let v = [0.0, 0.0, 2.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 3.0, 0.0, 2.0];
        let labels = [0, 0, 0, 1, 1, 1];
        let got = latent_distance_value(&v, 2, &labels, 1.0);
        assert!((got - 16.0).abs() < 1e-9);
    }

    #[test]
    fn single_batch_average_equals_dataset_value() {
        let v = Tensor::new(vec![4, 1], vec![0.0, 1.0, 3.0, 4.0]).unwrap();
        let labels = [0, 0, 1, 1];
        let full = latent_distance_value(v.data(), 1, &labels, 1.0);
        assert_eq!(batch_averaged_distance(&v, &labels, 1.0, 4, 0), full);
    }
}
