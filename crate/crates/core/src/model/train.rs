use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::arch::{Model, ModelSpec};
use super::data::EncodedDataset;
use super::scoring::{batch_logits, cross_entropy, predict};
use crate::autodiff::{AdamConfig, AdamState, Tape};
use crate::error::{Error, Result};
use crate::rng;

/// Examples per evaluation batch.
pub const EVAL_BATCH: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Minimum test accuracy of the returned model.
    pub threshold: f64,
    /// Always 0; echoed so logs show regularization was off.
    pub dropout: f64,
    /// Always 0; echoed so logs show regularization was off.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 100,
            patience: 75,
            seed: 0,
            threshold: 0.9,
            dropout: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return fail("batch size and max epochs must be positive".into());
        }
        if self.patience > self.max_epochs {
            return fail(format!("patience {} exceeds max epochs {}", self.patience, self.max_epochs));
        }
        if !(self.threshold > 0.25 && self.threshold <= 1.0) {
            return fail(format!("threshold {} outside (0.25, 1]", self.threshold));
        }
        if self.dropout != 0.0 || self.weight_decay != 0.0 {
            return fail("dropout and weight decay are not supported".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// Epoch whose weights were kept (lowest validation loss).
    pub best_epoch: usize,
    pub test_accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Logits `[n, 4]` for every example, computed in batches.
pub fn logits(model: &Model, data: &EncodedDataset) -> Result<Vec<[f64; 4]>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(EVAL_BATCH) {
        let mut tape = Tape::new();
        let weights = model.vars(&mut tape, false)?;
        let emb = model.forward(&mut tape, &weights, &data.batch(&chunk))?;
        let l = batch_logits(&mut tape, emb)?;
        out.extend(tape.value(l).values().chunks(4).map(|c| [c[0], c[1], c[2], c[3]]));
    }
    Ok(out)
}

pub fn predictions(model: &Model, data: &EncodedDataset) -> Result<Vec<usize>> {
    Ok(logits(model, data)?.iter().map(|l| predict(l)).collect())
}

pub fn evaluate_detailed(model: &Model, data: &EncodedDataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let all = logits(model, data)?;
    let mut correct = 0usize;
    let mut loss = 0.0;
    for (l, &t) in all.iter().zip(data.targets()) {
        correct += usize::from(predict(l) == t);
        loss += cross_entropy(l, t);
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: loss / n,
    })
}

/// Fraction of examples whose predicted odd index is correct.
pub fn evaluate(model: &Model, data: &EncodedDataset) -> Result<f64> {
    Ok(evaluate_detailed(model, data)?.accuracy)
}

/// Trains a fresh model on the base task, keeping the weights with the lowest
/// validation loss, and gates on test accuracy.
pub fn train_base(
    spec: ModelSpec,
    train: &EncodedDataset,
    val: &EncodedDataset,
    test: &EncodedDataset,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let trained = fit(spec, train, val, cfg)?;
    let test_accuracy = evaluate(&trained.model, test)?;
    if test_accuracy < cfg.threshold {
        return Err(Error::BaseModelBelowThreshold {
            accuracy: test_accuracy,
            threshold: cfg.threshold,
        });
    }
    Ok(TrainedModel {
        test_accuracy,
        ..trained
    })
}

/// The training loop without the test gate; `test_accuracy` is left NaN.
pub fn fit(spec: ModelSpec, train: &EncodedDataset, val: &EncodedDataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = Model::init(spec, cfg.seed)?;
    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut states: Vec<AdamState> = model.params.iter().map(|p| AdamState::new(p.tensor.numel(), adam)).collect();
    let mut shuffle = rng::stream(cfg.seed, "train-base/shuffle");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut best = (f64::INFINITY, 0, model.clone());
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let weights = model.vars(&mut tape, true)?;
            let emb = model.forward(&mut tape, &weights, &train.batch(chunk))?;
            let l = batch_logits(&mut tape, emb)?;
            let loss = tape.softmax_cross_entropy(l, &train.batch_targets(chunk))?;
            let value = tape.value(loss).values()[0];
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("training loss {value}"),
                });
            }
            total += value * chunk.len() as f64;
            tape.backward(loss)?;
            for ((p, &w), state) in model.params.iter_mut().zip(&weights).zip(&mut states) {
                let grad = tape.grad(w).expect("trainable parameter has a gradient");
                state.step(p.tensor.values_mut(), grad)?;
            }
        }
        let eval = evaluate_detailed(&model, val)?;
        log.push(EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            val_acc: eval.accuracy,
            val_loss: eval.loss,
        });
        if eval.loss < best.0 {
            best = (eval.loss, epoch, model.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainedModel {
        model: best.2,
        log,
        best_epoch: best.1,
        test_accuracy: f64::NAN,
    })
}

/// CSV with columns epoch, train_loss, val_acc, val_loss.
pub fn write_training_log(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_training_log(path: &Path) -> Result<Vec<EpochLog>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
