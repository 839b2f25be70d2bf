use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mask::{ablate, apply_subnetwork, MaskConfig, Provenance};
use super::train::{train_mask, MaskRun};
use crate::analysis::clamp_accuracy;
use crate::error::{Error, Result};
use crate::model::{evaluate, EncodedDataset, Model};
use crate::rng;

/// Minimum accuracy of a candidate subnetwork on its own mask-training task.
pub const SEARCH_GATE: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub learning_rates: Vec<f64>,
    pub s0: Vec<f64>,
    pub start_layers: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.01, 0.0001],
            s0: vec![0.1, 0.05, 0.0, -0.05],
            start_layers: vec![0, 1, 2],
        }
    }
}

impl SearchSpace {
    pub fn size(&self) -> usize {
        self.learning_rates.len() * self.s0.len() * self.start_layers.len()
    }

    /// Candidates in enumeration order: start layer, then learning rate, then `s0`.
    pub fn candidates(&self, base: &MaskConfig) -> Vec<MaskConfig> {
        let mut out = Vec::with_capacity(self.size());
        for &start_layer in &self.start_layers {
            for &learning_rate in &self.learning_rates {
                for &s0 in &self.s0 {
                    out.push(MaskConfig {
                        start_layer,
                        learning_rate,
                        s0,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }
}

/// Validation data for scoring candidates.
pub struct SearchData<'a> {
    pub mask_train: &'a EncodedDataset,
    pub mask_val: &'a EncodedDataset,
    pub target_val: &'a EncodedDataset,
    pub other_val: &'a EncodedDataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    /// Subroutine the mask was trained on, or `compositional`.
    pub objective: String,
    pub candidate: usize,
    pub start_layer: usize,
    pub learning_rate: f64,
    pub s0: f64,
    pub seed: u64,
    pub mask_val_acc: f64,
    pub ablated_target_acc: f64,
    pub ablated_other_acc: f64,
    pub score: f64,
    pub passed_gate: bool,
    pub active: usize,
    pub total: usize,
}

pub struct SearchOutcome {
    pub rows: Vec<SearchRow>,
    pub configs: Vec<MaskConfig>,
    pub best: Option<usize>,
    /// Mask run of the winning candidate.
    pub best_run: Option<MaskRun>,
}

impl SearchOutcome {
    pub fn winner(&self) -> Result<(&MaskConfig, &MaskRun)> {
        match (self.best, &self.best_run) {
            (Some(i), Some(run)) => Ok((&self.configs[i], run)),
            _ => Err(Error::SearchExhausted {
                gate: SEARCH_GATE,
                candidates: self.rows.len(),
            }),
        }
    }
}

/// Seed of the mask run for search candidate `candidate`.
pub fn candidate_seed(seed: u64, candidate: usize) -> u64 {
    rng::derive_seed(seed, &format!("mask-candidate-{candidate}"))
}

/// Scores `ablated val Other - ablated val Target` (clamped) for every
/// candidate passing the gate; the first best candidate wins.
pub fn hyperparameter_search(
    model: &Model,
    base: &MaskConfig,
    space: &SearchSpace,
    data: &SearchData,
    provenance: &Provenance,
) -> Result<SearchOutcome> {
    let configs = space.candidates(base);
    if configs.is_empty() {
        return Err(Error::Config("empty search space".into()));
    }
    let results: Vec<Result<(SearchRow, MaskRun)>> = configs
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| {
            let seed = candidate_seed(provenance.seed, i);
            let prov = Provenance {
                config: cfg.clone(),
                seed,
                ..provenance.clone()
            };
            let run = train_mask(model, data.mask_train, cfg, prov)?;
            let sub = apply_subnetwork(model, &run.subnetwork)?;
            let abl = ablate(model, &run.subnetwork)?;
            let mask_val_acc = evaluate(&sub, data.mask_val)?;
            let ablated_target_acc = evaluate(&abl, data.target_val)?;
            let ablated_other_acc = evaluate(&abl, data.other_val)?;
            let row = SearchRow {
                objective: provenance.objective(),
                candidate: i,
                start_layer: cfg.start_layer,
                learning_rate: cfg.learning_rate,
                s0: cfg.s0,
                seed,
                mask_val_acc,
                ablated_target_acc,
                ablated_other_acc,
                score: clamp_accuracy(ablated_other_acc) - clamp_accuracy(ablated_target_acc),
                passed_gate: mask_val_acc >= SEARCH_GATE,
                active: run.subnetwork.active(),
                total: run.subnetwork.total(),
            };
            Ok((row, run))
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut best: Option<(usize, f64)> = None;
    let mut best_run = None;
    for r in results {
        let (row, run) = r?;
        if row.passed_gate && best.is_none_or(|(_, s)| row.score > s) {
            best = Some((row.candidate, row.score));
            best_run = Some(run);
        }
        rows.push(row);
    }
    Ok(SearchOutcome {
        rows,
        configs,
        best: best.map(|b| b.0),
        best_run,
    })
}

pub fn write_search_table(rows: &[SearchRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_search_table(path: &Path) -> Result<Vec<SearchRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
