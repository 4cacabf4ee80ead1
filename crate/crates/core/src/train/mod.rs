//! Training loop, metrics and run artifacts.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod plot;
mod sgd;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{ArchChoice, DataConfig, Imbalance, LossKind, Seeds, TrainConfig};
pub use eval::{evaluate, EvalTask};
pub use sgd::Sgd;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::autodiff::Tape;
use crate::backdrop::{effective_batch_size, MaskMode, MaskingLayer};
use crate::data::{
    gaussian_clouds, load_cifar10, pgm::read_image_folder, truncate_binary_imbalance,
    truncate_linear_imbalance, BatchIterator, CifarSplit, Dataset,
};
use crate::error::{Error, Result};
use crate::gp::{desk_classes, scale_labels, GpClassSpec};
use crate::losses::{composite_backdrop_loss, rank_statistic_loss, softmax_cross_entropy};
use crate::nn::{build_model, BuildOptions, ModelState};
use crate::tensor::Tensor;
use config::{LOSS_MASK_DIST, LOSS_MASK_XE};

/// Stream offset for the composite loss's two mask generators, past any
/// masking layer of the network.
const LOSS_MASK_STREAM: u64 = 1 << 16;

/// Metrics of one evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// Training-loss components averaged over the epochs since the last
    /// record, and the effective batch size of every masked term.
    pub train: Vec<(String, f64)>,
    pub test: Vec<(String, f64)>,
    pub wall_seconds: f64,
}

impl MetricsRecord {
    pub fn get(&self, split: &str, metric: &str) -> Option<f64> {
        let rows = match split {
            "train" => &self.train,
            "test" => &self.test,
            _ => return None,
        };
        rows.iter().find(|(n, _)| n == metric).map(|(_, v)| *v)
    }
}

/// `epoch,split,metric,value` rows. Wall-clock time is kept out so that
/// identical runs produce identical files.
pub fn metrics_csv(history: &[MetricsRecord]) -> String {
    let mut out = String::from("epoch,split,metric,value\n");
    for r in history {
        for (split, rows) in [("train", &r.train), ("test", &r.test)] {
            for (name, v) in rows {
                writeln!(out, "{},{split},{name},{v}", r.epoch).expect("string write");
            }
        }
    }
    out
}

pub fn timing_csv(history: &[MetricsRecord]) -> String {
    let mut out = String::from("epoch,wall_seconds\n");
    for r in history {
        writeln!(out, "{},{}", r.epoch, r.wall_seconds).expect("string write");
    }
    out
}

/// Training and test sets named by the configuration. The data seed drives
/// synthetic generation and truncation.
pub fn load_data(cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let seed = cfg.seeds.data;
    match &cfg.data {
        DataConfig::Gptx { train, test, .. } => Ok((Dataset::load_gptx(train)?, Dataset::load_gptx(test)?)),
        DataConfig::Cifar10 { dir, imbalance } => {
            let train = load_cifar10(dir, CifarSplit::Train)?;
            let test = load_cifar10(dir, CifarSplit::Test)?;
            match imbalance {
                None => Ok((train, test)),
                Some(Imbalance::Binary {
                    class_a,
                    class_b,
                    ratio,
                }) => Ok((
                    truncate_binary_imbalance(&train, *class_a, *class_b, *ratio, seed)?,
                    // the test split keeps both classes in full
                    truncate_binary_imbalance(&test, *class_a, *class_b, 1.0, seed)?,
                )),
                Some(Imbalance::Linear { unit }) => {
                    Ok((truncate_linear_imbalance(&train, *unit, seed)?, test))
                }
            }
        }
        DataConfig::ImageFolder { train, test } => Ok((read_image_folder(train)?, read_image_folder(test)?)),
        DataConfig::Clouds {
            train_counts,
            test_counts,
            dim,
            separation,
        } => Ok((
            gaussian_clouds(train_counts, *dim, *separation, crate::gp::derive_seed(seed, &[0]))?,
            gaussian_clouds(test_counts, *dim, *separation, crate::gp::derive_seed(seed, &[1]))?,
        )),
    }
}

/// The class grid for scale-specific accuracy, if the task has one.
fn gp_classes(cfg: &TrainConfig, n_classes: usize) -> Option<Vec<GpClassSpec>> {
    let DataConfig::Gptx { classes, .. } = &cfg.data else {
        return None;
    };
    let classes = classes.clone().unwrap_or_else(desk_classes);
    let usable = classes.len() == n_classes
        && (0..n_classes).all(|l| scale_labels(l as u16, &classes).is_ok());
    usable.then_some(classes)
}

/// Model, optimizer and loss-side masks for step-by-step training.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: ModelState,
    pub opt: Sgd,
    loss: LossKind,
    tau: f64,
    d: f64,
    mask_xe: MaskingLayer,
    mask_dist: MaskingLayer,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, input_shape: &[usize]) -> Result<Self> {
        cfg.validate()?;
        let opts = BuildOptions {
            init_seed: cfg.seeds.init,
            mask_seed: cfg.seeds.mask,
            convention: cfg.scaling_convention,
            short_circuit: cfg.short_circuit,
        };
        let model = build_model(&cfg.arch_spec()?, input_shape, opts)?;
        let loss_mask = |tag: &str, stream: u64| -> Result<MaskingLayer> {
            Ok(MaskingLayer::new(cfg.mask_p(tag), MaskMode::Batch, cfg.seeds.mask)?
                .with_stream(LOSS_MASK_STREAM + stream)
                .with_tag(tag)
                .with_convention(cfg.scaling_convention))
        };
        Ok(Trainer {
            model,
            opt: Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay),
            loss: cfg.loss,
            tau: cfg.tau,
            d: cfg.d,
            mask_xe: loss_mask(LOSS_MASK_XE, 0)?,
            mask_dist: loss_mask(LOSS_MASK_DIST, 1)?,
        })
    }

    /// Masked terms and their drop probabilities.
    pub fn masked_terms(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self.model.masks().map(|m| (m.tag().to_string(), m.p())).collect();
        if self.loss == LossKind::Composite {
            out.push((LOSS_MASK_XE.into(), self.mask_xe.p()));
            out.push((LOSS_MASK_DIST.into(), self.mask_dist.p()));
        }
        out
    }

    /// One SGD step on a batch; returns the loss and its components.
    pub fn step(&mut self, images: &Tensor, labels: &[usize]) -> Result<Vec<(String, f64)>> {
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let fwd = self.model.forward(&mut tape, x)?;
        let loss = match self.loss {
            LossKind::Xe => softmax_cross_entropy(&mut tape, fwd.output, labels)?,
            LossKind::Rank => rank_statistic_loss(&mut tape, fwd.output, labels, self.tau)
                .map_err(|e| Error::Training(format!("{e}")))?,
            LossKind::Composite => composite_backdrop_loss(
                &mut tape,
                fwd.output,
                fwd.penultimate,
                labels,
                self.d,
                &mut self.mask_xe,
                &mut self.mask_dist,
            )?,
        };
        tape.backward(loss.value)?;
        let grads: Vec<Tensor> = fwd
            .params
            .iter()
            .map(|&p| {
                tape.grad(p)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros_like(tape.value(p)))
            })
            .collect();
        let names: Vec<String> = self.model.params().into_iter().map(|(n, _)| n).collect();
        self.opt.step(self.model.params_mut(), &grads, &names)?;
        let mut out = vec![("loss".to_string(), loss.item(&tape))];
        if loss.breakdown.len() > 1 {
            out.extend(loss.breakdown);
        }
        Ok(out)
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub history: Vec<MetricsRecord>,
    pub trainer: Trainer,
}

fn mean_rows(acc: &[(String, f64)], steps: usize) -> Vec<(String, f64)> {
    acc.iter().map(|(n, v)| (n.clone(), v / steps as f64)).collect()
}

/// Trains on already loaded data.
pub fn train_on(cfg: &TrainConfig, train_ds: &Dataset, test_ds: &Dataset) -> Result<RunOutput> {
    let mut trainer = Trainer::new(cfg, train_ds.sample_shape())?;
    let batches = BatchIterator::new(train_ds, cfg.batch_size, cfg.seeds.data, cfg.stratified())?;
    let task = EvalTask {
        loss: cfg.loss,
        tau: cfg.tau,
        d: cfg.d,
        gp_classes: gp_classes(cfg, test_ds.n_classes),
        batch_size: cfg.batch_size,
        seed: cfg.seeds.data,
    };
    let ebs: Vec<(String, f64)> = trainer
        .masked_terms()
        .into_iter()
        .map(|(tag, p)| (format!("ebs.{tag}"), effective_batch_size(cfg.batch_size, p)))
        .collect();
    for (name, v) in &ebs {
        log::info!("{name} = {v}");
    }
    let start = Instant::now();
    let mut history = Vec::new();
    let mut acc: Vec<(String, f64)> = Vec::new();
    let mut steps = 0usize;
    for epoch in 1..=cfg.epochs {
        for (x, y) in batches.epoch(epoch as u64) {
            let rows = trainer.step(&x, &y)?;
            if acc.is_empty() {
                acc = rows.iter().map(|(n, _)| (n.clone(), 0.0)).collect();
            }
            for ((_, a), (_, v)) in acc.iter_mut().zip(&rows) {
                *a += v;
            }
            steps += 1;
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let mut train_rows = mean_rows(&acc, steps.max(1));
            train_rows.extend(ebs.iter().cloned());
            let test_rows = evaluate(&mut trainer.model, test_ds, &task)?;
            log::info!(
                "epoch {epoch}: {}",
                test_rows
                    .iter()
                    .map(|(n, v)| format!("{n}={v:.4}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            );
            history.push(MetricsRecord {
                epoch,
                train: train_rows,
                test: test_rows,
                wall_seconds: start.elapsed().as_secs_f64(),
            });
            acc.clear();
            steps = 0;
        }
    }
    Ok(RunOutput { history, trainer })
}

/// Loads the configured data, trains, and writes `config.resolved`,
/// `metrics.csv`, `timing.csv` and `model.ckpt` into the output directory
/// when one is configured.
pub fn train(cfg: &TrainConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join("config.resolved"), &cfg.to_toml()?)?;
    }
    let (train_ds, test_ds) = load_data(cfg)?;
    let run = train_on(cfg, &train_ds, &test_ds)?;
    if let Some(dir) = &cfg.out_dir {
        write(&dir.join("metrics.csv"), &metrics_csv(&run.history))?;
        write(&dir.join("timing.csv"), &timing_csv(&run.history))?;
        save_checkpoint(
            &dir.join("model.ckpt"),
            &run.trainer.model,
            run.trainer.opt.velocities(),
        )?;
    }
    Ok(run)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
