use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mask::{anneal_beta, binarize, MaskConfig, MaskState, Provenance, Subnetwork};
use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{batch_logits, BatchInput, EncodedDataset, Model, EVAL_BATCH};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskMode {
    /// Relaxed mask `sigmoid(beta * s)`.
    Soft(f64),
    /// Binary mask `H(s)`.
    Hard,
}

/// Embeddings of `input` under the masked base model.
pub fn masked_forward(model: &Model, state: &MaskState, input: &BatchInput, mode: MaskMode) -> Result<Vec<f64>> {
    let effective = match mode {
        MaskMode::Soft(beta) => state.soft_model(model, beta)?,
        MaskMode::Hard => state.hard_model(model)?,
    };
    effective.embed(input)
}

impl MaskState {
    /// Base model with weights `w * H(s)`.
    pub fn hard_model(&self, model: &Model) -> Result<Model> {
        self.check_shapes(model)?;
        let mut out = model.clone();
        for (&i, s) in self.params.iter().zip(&self.logits) {
            for (w, &l) in out.params[i].tensor.values_mut().iter_mut().zip(s.values()) {
                if !super::mask::heaviside(l) {
                    *w = 0.0;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskObjective {
    pub task: f64,
    pub penalty: f64,
}

impl MaskObjective {
    pub fn total(&self) -> f64 {
        self.task + self.penalty
    }
}

/// Task cross-entropy under the soft mask at `state.beta` plus
/// `lambda * sum(sigmoid(beta * s))`, with the gradient for every logit tensor.
pub fn mask_loss(
    model: &Model,
    state: &MaskState,
    input: &BatchInput,
    targets: &[usize],
    lambda: f64,
) -> Result<(MaskObjective, Vec<Vec<f64>>)> {
    objective(model, state, input, 0, targets, lambda)
}

fn objective(
    model: &Model,
    state: &MaskState,
    input: &BatchInput,
    first_layer: usize,
    targets: &[usize],
    lambda: f64,
) -> Result<(MaskObjective, Vec<Vec<f64>>)> {
    state.check_shapes(model)?;
    let mut tape = Tape::new();
    let mut weights = Vec::with_capacity(model.params.len());
    let mut logit_vars = Vec::with_capacity(state.params.len());
    let mut relaxed = Vec::with_capacity(state.params.len());
    let mut next = 0;
    for (i, p) in model.params.iter().enumerate() {
        if state.params.get(next) == Some(&i) {
            let w = tape.constant(p.tensor.clone())?;
            let s = tape.param(state.logits[next].clone())?;
            let scaled = tape.scale(s, state.beta)?;
            let m = tape.sigmoid(scaled)?;
            weights.push(tape.mul(w, m)?);
            logit_vars.push(s);
            relaxed.push(m);
            next += 1;
        } else if p.layer_index < first_layer {
            weights.push(tape.constant(Tensor::scalar(0.0))?);
        } else {
            weights.push(tape.constant(p.tensor.clone())?);
        }
    }
    let emb = model.forward_range(&mut tape, &weights, input, first_layer..model.num_layers())?;
    let logits = batch_logits(&mut tape, emb)?;
    let task = tape.softmax_cross_entropy(logits, targets)?;
    let mut loss = task;
    let mut sum: Option<Var> = None;
    for m in relaxed {
        let s = tape.sum(m)?;
        sum = Some(match sum {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    let mut penalty = 0.0;
    if let Some(sum) = sum {
        let p = tape.scale(sum, lambda)?;
        penalty = tape.value(p).values()[0];
        loss = tape.add(task, p)?;
    }
    let task_value = tape.value(task).values()[0];
    tape.backward(loss)?;
    let grads = logit_vars
        .iter()
        .map(|&s| tape.grad(s).expect("mask logit has a gradient").to_vec())
        .collect();
    Ok((
        MaskObjective {
            task: task_value,
            penalty,
        },
        grads,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskEpochLog {
    pub epoch: usize,
    pub beta: f64,
    pub task_loss: f64,
    pub penalty: f64,
    /// Fraction of masked weights with `s > 0` at the end of the epoch.
    pub active_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct MaskRun {
    pub state: MaskState,
    pub subnetwork: Subnetwork,
    pub log: Vec<MaskEpochLog>,
}

/// Outputs of layers `0..layer` of `model` for every row of `data`.
pub fn prefix_activations(model: &Model, data: &EncodedDataset, layer: usize) -> Result<EncodedDataset> {
    let mut values = Vec::new();
    let mut width = 0;
    for chunk in data.chunks(EVAL_BATCH) {
        let mut tape = Tape::new();
        let weights = model.vars(&mut tape, false)?;
        let out = model.forward_range(&mut tape, &weights, &data.batch(&chunk), 0..layer)?;
        width = tape.value(out).shape()[1];
        values.extend_from_slice(tape.value(out).values());
    }
    EncodedDataset::from_features(values, width, data.targets().to_vec())
}

/// Learns mask logits over the frozen `model` with Adam on `s` only and the
/// annealed temperature, then binarizes.
pub fn train_mask(model: &Model, data: &EncodedDataset, cfg: &MaskConfig, provenance: Provenance) -> Result<MaskRun> {
    let mut state = MaskState::new(model, cfg)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cached;
    let inputs = if cfg.start_layer > 0 {
        cached = prefix_activations(model, data, cfg.start_layer)?;
        &cached
    } else {
        data
    };
    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut optim: Vec<AdamState> = state.logits.iter().map(|s| AdamState::new(s.numel(), adam)).collect();
    let mut shuffle = rng::stream(provenance.seed, "train-mask/shuffle");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let total: usize = state.logits.iter().map(Tensor::numel).sum();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        state.beta = anneal_beta(epoch, cfg)?;
        order.shuffle(&mut shuffle);
        let (mut task, mut penalty) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let input = inputs.batch(chunk);
            let (obj, grads) = objective(model, &state, &input, cfg.start_layer, &inputs.batch_targets(chunk), cfg.lambda)
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::Diverged {
                        epoch,
                        detail: e.to_string(),
                    },
                    e => e,
                })?;
            if !obj.total().is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("mask loss {}", obj.total()),
                });
            }
            task += obj.task * chunk.len() as f64;
            penalty += obj.penalty * chunk.len() as f64;
            for ((s, g), opt) in state.logits.iter_mut().zip(&grads).zip(&mut optim) {
                opt.step(s.values_mut(), g)?;
            }
        }
        let active = state
            .logits
            .iter()
            .flat_map(|s| s.values())
            .filter(|&&v| super::mask::heaviside(v))
            .count();
        log.push(MaskEpochLog {
            epoch,
            beta: state.beta,
            task_loss: task / data.len() as f64,
            penalty: penalty / data.len() as f64,
            active_fraction: active as f64 / total as f64,
        });
    }
    let subnetwork = binarize(&state, model, provenance)?;
    Ok(MaskRun { state, subnetwork, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{finite_difference_gradient, max_relative_error};
    use crate::model::ModelSpec;

    fn setup() -> (Model, MaskState, BatchInput, Vec<usize>) {
        let spec = ModelSpec {
            widths: vec![5, 4, 3],
            backbone_dense: 1,
            ..ModelSpec::vision(6)
        };
        let model = Model::init(spec, 4).unwrap();
        let mut state = MaskState::new(&model, &MaskConfig::default()).unwrap();
        let mut r = rng::stream(1, "t");
        for s in &mut state.logits {
            for v in s.values_mut() {
                *v = rand::Rng::random_range(&mut r, -0.5..0.5);
            }
        }
        state.beta = 3.0;
        let values = (0..8 * 6).map(|i| ((i * 7) % 5) as f64 / 4.0).collect();
        (model, state, BatchInput::Dense(Tensor::new(vec![8, 6], values).unwrap()), vec![1, 3])
    }

    #[test]
    fn zero_lambda_is_task_loss() {
        let (model, state, input, targets) = setup();
        let (obj, _) = mask_loss(&model, &state, &input, &targets, 0.0).unwrap();
        assert_eq!(obj.penalty, 0.0);
        assert!(obj.task > 0.0);
    }

    #[test]
    fn penalty_at_zero_logits_is_half_count() {
        let (model, mut state, input, targets) = setup();
        let k: usize = state.logits.iter().map(Tensor::numel).sum();
        for s in &mut state.logits {
            s.values_mut().fill(0.0);
        }
        let (obj, _) = mask_loss(&model, &state, &input, &targets, 1e-8).unwrap();
        assert!((obj.penalty - 1e-8 * k as f64 / 2.0).abs() < 1e-20);
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let (model, state, input, targets) = setup();
        let lambda = 0.05;
        let (_, grads) = mask_loss(&model, &state, &input, &targets, lambda).unwrap();
        for k in 0..state.logits.len() {
            let f = |x: &[f64]| {
                let mut s = state.clone();
                s.logits[k] = Tensor::new(s.logits[k].shape().to_vec(), x.to_vec()).unwrap();
                mask_loss(&model, &s, &input, &targets, lambda).unwrap().0.total()
            };
            let numeric = finite_difference_gradient(f, state.logits[k].values(), 1e-6);
            assert!(max_relative_error(&grads[k], &numeric, 1e-6) < 1e-4);
        }
    }

    #[test]
    fn saturated_logits_reproduce_or_zero_the_model() {
        let (model, mut state, input, _) = setup();
        for s in &mut state.logits {
            s.values_mut().fill(10.0);
        }
        assert_eq!(masked_forward(&model, &state, &input, MaskMode::Hard).unwrap(), model.embed(&input).unwrap());
        for s in &mut state.logits {
            s.values_mut().fill(-10.0);
        }
        let mut zeroed = model.clone();
        for p in zeroed.params.iter_mut().filter(|p| p.maskable) {
            p.tensor.values_mut().fill(0.0);
        }
        assert_eq!(masked_forward(&model, &state, &input, MaskMode::Hard).unwrap(), zeroed.embed(&input).unwrap());
    }
}
