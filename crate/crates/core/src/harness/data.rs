use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use crate::dataset::{Dataset, Stimulus};
use crate::error::Result;
use crate::model::{EncodedDataset, ModelSpec};
use crate::task::{Modality, Role, Rule, Split, Subroutine, TaskSpec};
use crate::vision::PIXELS;
use crate::{language, vision};

/// Datasets of one subroutine's mask training and probes.
pub struct SubroutineData {
    pub mask_train: EncodedDataset,
    pub mask_val: EncodedDataset,
    pub target_val: EncodedDataset,
    pub target_test: EncodedDataset,
    pub other_val: EncodedDataset,
    pub other_test: EncodedDataset,
}

/// Every dataset an experiment needs for one rule, encoded for the model.
pub struct RuleData {
    pub rule: Rule,
    pub base_train: EncodedDataset,
    pub base_val: EncodedDataset,
    pub base_test: EncodedDataset,
    pub subroutines: BTreeMap<Subroutine, SubroutineData>,
}

pub fn model_spec(rule: Rule) -> ModelSpec {
    match rule.modality() {
        Modality::Vision => ModelSpec::vision(PIXELS),
        Modality::Language => ModelSpec::language(language::builtin().0.size(), language::MAX_LEN),
    }
}

/// Cache path of a dataset; probe roles that share data share a file.
pub fn cache_path(cache: &Path, task: &TaskSpec, seed: u64) -> PathBuf {
    cache.join(format!("{}.seed{seed}.jsonl", task.data_key()))
}

fn cached<S: Stimulus>(
    cache: &Path,
    task: &TaskSpec,
    seed: u64,
    build: impl FnOnce(&TaskSpec, u64) -> Result<Dataset<S>>,
) -> Result<Dataset<S>> {
    let path = cache_path(cache, task, seed);
    if path.exists() {
        if let Ok(d) = Dataset::<S>::load(&path) {
            if d.meta.task.data_key() == task.data_key() && d.meta.seed == seed && d.len() == task.size {
                return Ok(d);
            }
        }
    }
    let d = build(task, seed)?;
    d.save(&path)?;
    Ok(d)
}

/// Loads a dataset from the cache, generating and caching it when absent.
pub fn dataset(cache: &Path, task: &TaskSpec, seed: u64) -> Result<EncodedDataset> {
    match task.rule.modality() {
        Modality::Vision => EncodedDataset::encode(&cached(cache, task, seed, vision::build_dataset)?),
        Modality::Language => EncodedDataset::encode(&cached(cache, task, seed, language::build_dataset)?),
    }
}

pub fn load_rule_data(cfg: &ExperimentConfig, rule: Rule) -> Result<RuleData> {
    let cache = cfg.cache_dir();
    let sizes = cfg.sizes.for_rule(rule);
    let get = |role: Role, split: Split, size: usize| dataset(&cache, &TaskSpec::new(rule, role, split, size)?, cfg.data_seed);
    let mut subroutines = BTreeMap::new();
    for sr in rule.subroutines() {
        let (m, p) = (sizes.mask_train, sizes.probe);
        subroutines.insert(
            sr,
            SubroutineData {
                mask_train: get(Role::MaskTrain(sr), Split::Train, m.train)?,
                mask_val: get(Role::MaskTrain(sr), Split::Val, m.val)?,
                target_val: get(Role::TestTarget(sr), Split::Val, p.val)?,
                target_test: get(Role::TestTarget(sr), Split::Test, p.test)?,
                other_val: get(Role::TestOther(sr), Split::Val, p.val)?,
                other_test: get(Role::TestOther(sr), Split::Test, p.test)?,
            },
        );
    }
    Ok(RuleData {
        rule,
        base_train: get(Role::Base, Split::Train, sizes.base.train)?,
        base_val: get(Role::Base, Split::Val, sizes.base.val)?,
        base_test: get(Role::Base, Split::Test, sizes.base.test)?,
        subroutines,
    })
}
