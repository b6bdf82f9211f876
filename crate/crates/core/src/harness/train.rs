use std::f64::consts::PI;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{build_model, DynModel, ForwardOptions, Model, ModelConfig};
use crate::nn::{adamw_step, AdamHyper, AdamState, Binder};
use crate::rng::{permutation, Seed};
use crate::tensor::{Float, Precision};

use super::task::Dataset;

/// Everything needed to reproduce one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub model: ModelConfig,
    pub hyper: AdamHyper,
    pub warmup_steps: usize,
    pub min_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub label_smoothing: f64,
    /// Keep PEG kernels at their initial values.
    pub freeze_peg: bool,
    /// Where checkpoints and the metrics log go; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainRun {
    fn default() -> Self {
        TrainRun {
            model: ModelConfig::toy(),
            hyper: AdamHyper::default(),
            warmup_steps: 0,
            min_lr: 1e-5,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            label_smoothing: 0.0,
            freeze_peg: false,
            out_dir: None,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "adam_eps",
    "batch_size",
    "beta1",
    "beta2",
    "epochs",
    "freeze_peg",
    "label_smoothing",
    "lr",
    "min_lr",
    "out_dir",
    "seed",
    "warmup_steps",
    "weight_decay",
];

fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("invalid value `{value}`")))
}

impl TrainRun {
    /// Sets a training or model key; `false` for keys owned by neither.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lr" => self.hyper.lr = num(key, value)?,
            "weight_decay" => self.hyper.weight_decay = num(key, value)?,
            "beta1" => self.hyper.betas.0 = num(key, value)?,
            "beta2" => self.hyper.betas.1 = num(key, value)?,
            "adam_eps" => self.hyper.eps = num(key, value)?,
            "warmup_steps" => self.warmup_steps = num(key, value)?,
            "min_lr" => self.min_lr = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "label_smoothing" => self.label_smoothing = num(key, value)?,
            "freeze_peg" => {
                self.freeze_peg = match value.trim() {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    other => return Err(Error::config(key, format!("expected true or false, got `{other}`"))),
                }
            }
            "out_dir" => self.out_dir = Some(PathBuf::from(value.trim())),
            _ => return self.model.set(key, value),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.hyper.lr >= 0.0) {
            return Err(Error::config("lr", format!("learning rate must be non-negative, got {}", self.hyper.lr)));
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.hyper.lr) {
            return Err(Error::config("min_lr", "must lie in [0, lr]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config("label_smoothing", "must lie in [0, 1)"));
        }
        let (b1, b2) = self.hyper.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config("beta1", "betas must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Canonical key-sorted text for the training keys (model keys excluded).
    pub fn train_kv_text(&self) -> String {
        let mut lines = vec![
            format!("adam_eps={}", self.hyper.eps),
            format!("batch_size={}", self.batch_size),
            format!("beta1={}", self.hyper.betas.0),
            format!("beta2={}", self.hyper.betas.1),
            format!("epochs={}", self.epochs),
            format!("freeze_peg={}", self.freeze_peg),
            format!("label_smoothing={}", self.label_smoothing),
            format!("lr={}", self.hyper.lr),
            format!("min_lr={}", self.min_lr),
        ];
        if let Some(dir) = &self.out_dir {
            lines.push(format!("out_dir={}", dir.display()));
        }
        lines.push(format!("seed={}", self.seed));
        lines.push(format!("warmup_steps={}", self.warmup_steps));
        lines.push(format!("weight_decay={}", self.hyper.weight_decay));
        lines.into_iter().map(|l| l + "\n").collect()
    }

    /// Learning rate at optimizer step `step` of `total`: linear warmup to
    /// `lr`, then cosine decay to `min_lr`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let lr = self.hyper.lr;
        if step < self.warmup_steps {
            return lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = total.saturating_sub(self.warmup_steps).max(1);
        let p = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.min_lr + 0.5 * (lr - self.min_lr) * (1.0 + (PI * p).cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub test_acc: f64,
}

impl fmt::Display for EpochMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} loss={:.6} test_acc={:.4}", self.epoch, self.loss, self.test_acc)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: DynModel,
    pub metrics: Vec<EpochMetrics>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.log";
pub const RUN_FILE: &str = "run.cfg";

/// Trains a fresh model on `train`, scoring `test` after every epoch.
///
/// Steps whose scheduled learning rate is zero are skipped, so `lr = 0`
/// leaves the parameters untouched.
///
/// With an output directory the run config, a checkpoint after every epoch
/// (and one before the first) and an append-only metrics log are written. A
/// non-finite loss or parameter ends the run with [`Error::Diverged`] and
/// leaves the last good checkpoint in place.
pub fn train(run: &TrainRun, train: &Dataset, test: &Dataset) -> Result<TrainOutcome> {
    run.validate()?;
    match run.model.precision {
        Precision::F32 => train_model(run, build_model::<f32>(&run.model, run.seed)?, train, test),
        Precision::F64 => train_model(run, build_model::<f64>(&run.model, run.seed)?, train, test),
    }
}

fn wrap<T: Float>(model: Model<T>) -> DynModel {
    let any: Box<dyn std::any::Any> = Box::new(model);
    match any.downcast::<Model<f32>>() {
        Ok(m) => DynModel::F32(*m),
        Err(any) => DynModel::F64(*any.downcast::<Model<f64>>().expect("model precision is f32 or f64")),
    }
}

fn save<T: Float>(model: &Model<T>, dir: Option<&Path>) -> Result<()> {
    match dir {
        Some(d) => crate::model::save_checkpoint(model, &d.join(CHECKPOINT_FILE)),
        None => Ok(()),
    }
}

/// Continues training `model` under `run`.
pub fn train_model<T: Float>(run: &TrainRun, mut model: Model<T>, train: &Dataset, test: &Dataset) -> Result<TrainOutcome> {
    run.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if run.freeze_peg {
        model.set_peg_trainable(false);
    }
    let dir = run.out_dir.as_deref();
    let mut log = None;
    if let Some(d) = dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        let text = format!("{}{}", run.model.to_kv_text(), run.train_kv_text());
        fs::write(d.join(RUN_FILE), text).map_err(|e| Error::io(d.join(RUN_FILE), e))?;
        let path = d.join(METRICS_FILE);
        fs::write(&path, "").map_err(|e| Error::io(&path, e))?;
        log = Some(path);
        save(&model, dir)?;
    }
    let steps_per_epoch = train.len().div_ceil(run.batch_size);
    let total = steps_per_epoch * run.epochs;
    let mut state = AdamState::new(&model.store);
    let mut metrics = Vec::with_capacity(run.epochs);
    let mut step = 0;
    for epoch in 1..=run.epochs {
        let order = permutation(&mut Seed(run.seed).child_indexed("train/shuffle", epoch).stream("order"), train.len());
        let mut loss_sum = 0.0;
        for chunk in order.chunks(run.batch_size) {
            let (images, labels) = train.batch::<T>(chunk);
            let tape = Tape::new();
            let grads = {
                let b = Binder::new(&tape, &model.store);
                let out = model.forward(&b, tape.constant(images), ForwardOptions::default())?;
                let loss = out.logits.cross_entropy(&labels, run.label_smoothing)?;
                let value = loss.value().data()[0].as_f64();
                if !value.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                loss_sum += value * chunk.len() as f64;
                let g = tape.backward(loss)?;
                b.grads(&g)
            };
            let lr = run.lr_at(step, total);
            step += 1;
            if lr > 0.0 {
                adamw_step(&mut model.store, &grads, &mut state, AdamHyper { lr, ..run.hyper })?;
            }
        }
        if model.store.iter().any(|(_, p)| !p.value.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        let m = EpochMetrics {
            epoch,
            loss: loss_sum / train.len() as f64,
            test_acc: if test.is_empty() { f64::NAN } else { accuracy(&model, test, false)? },
        };
        save(&model, dir)?;
        if let Some(path) = &log {
            let mut f = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
            writeln!(f, "{m}").map_err(|e| Error::io(path, e))?;
        }
        metrics.push(m);
    }
    Ok(TrainOutcome {
        model: wrap(model),
        metrics,
    })
}

/// Index of the largest logit in each row; ties go to the lowest index.
pub fn argmax_rows(logits: &[f64], classes: usize) -> Vec<usize> {
    logits
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

const EVAL_BATCH: usize = 64;

/// Top-1 accuracy of `model` on `data`.
pub fn accuracy<T: Float>(model: &Model<T>, data: &Dataset, resize_pe: bool) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty dataset".into()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0;
    for chunk in idx.chunks(EVAL_BATCH) {
        let (images, labels) = data.batch::<T>(chunk);
        let logits = model.forward_variable_resolution(&images, resize_pe)?;
        let pred = argmax_rows(&logits.to_f64_vec(), model.cfg.classes);
        correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

pub fn evaluate(model: &DynModel, data: &Dataset, resize_pe: bool) -> Result<f64> {
    match model {
        DynModel::F32(m) => accuracy(m, data, resize_pe),
        DynModel::F64(m) => accuracy(m, data, resize_pe),
    }
}
