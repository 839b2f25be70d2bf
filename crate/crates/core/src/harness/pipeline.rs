use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode};
use super::data::{load_rule_data, model_spec, RuleData, SubroutineData};
use crate::analysis::{
    layer_counts, overlap_report, sparsity_report, summarize, write_report, write_sparsity_csv, OverlapReport, Report,
    RunRecord,
};
use crate::error::{Error, Result};
use crate::model::{
    evaluate, header_for, load_checkpoint, save_checkpoint, train_base, write_training_log, Model,
};
use crate::rng;
use crate::sparsify::{
    ablate, apply_subnetwork, hyperparameter_search, read_search_table, train_mask, write_search_table, MaskConfig,
    Provenance, SearchData, SearchRow, Subnetwork, SEARCH_GATE,
};
use crate::task::{Rule, Subroutine};

/// Pipeline stages, in order; running a stage runs everything before it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Data,
    Base,
    Search,
    Masks,
    Evaluate,
    Analyze,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub mode: Mode,
    pub config: ExperimentConfig,
    /// Branches (`rule/seed`) that reached the requested stage.
    pub completed: Vec<String>,
    /// Branches that stopped at a gate, as `rule/seed[/subroutine]: reason`.
    pub failures: Vec<String>,
}

impl Manifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        if !path.exists() {
            return Err(Error::MissingManifest(path));
        }
        read_json(&path)
    }
}

/// The configuration chosen by the search for one (model, subroutine).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub config_hash: String,
    pub candidate: usize,
    pub config: MaskConfig,
    /// Seed of repeat 0; later repeats derive from it.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Failure {
    config_hash: String,
    reason: String,
    accuracy: f64,
    threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneRow {
    pub candidate: usize,
    pub start_layer: usize,
    pub learning_rate: f64,
    pub s0: f64,
    pub seed: u64,
    pub val_acc: f64,
    pub passed_gate: bool,
    pub active: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapEntry {
    pub rule: Rule,
    pub seed: u64,
    pub overlap: OverlapReport,
}

/// What a pipeline run produced.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub records: Vec<RunRecord>,
    pub failures: Vec<String>,
    pub report: Option<Report>,
    pub overlap: Vec<OverlapEntry>,
}

impl Outcome {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn is_gate(e: &Error) -> bool {
    matches!(
        e,
        Error::BaseModelBelowThreshold { .. } | Error::SearchExhausted { .. } | Error::PrunedBelowThreshold { .. }
    )
}

pub fn model_id(hash: &str, mode: Mode, rule: Rule, seed: u64) -> String {
    format!("{hash}/{}/{rule}/{seed}", mode.as_str())
}

pub fn repeat_seed(choice_seed: u64, repeat: usize) -> u64 {
    if repeat == 0 {
        choice_seed
    } else {
        rng::derive_seed(choice_seed, &format!("repeat-{repeat}"))
    }
}

pub fn subnet_path(dir: &Path, sr: Subroutine, repeat: usize) -> PathBuf {
    dir.join("subnets").join(format!("{sr}-r{repeat}.subnet"))
}

fn choice_path(dir: &Path, sr: Subroutine) -> PathBuf {
    dir.join("subnets").join(format!("{sr}.choice.json"))
}

struct Branch<'a> {
    cfg: &'a ExperimentConfig,
    hash: &'a str,
    rule: Rule,
    seed: u64,
    dir: PathBuf,
    data: &'a RuleData,
}

impl Branch<'_> {
    fn id(&self) -> String {
        model_id(self.hash, self.cfg.mode, self.rule, self.seed)
    }

    fn label(&self) -> String {
        format!("{}/{}", self.rule, self.seed)
    }

    fn standard_dir(&self) -> PathBuf {
        self.cfg
            .experiment_dir()
            .join(self.rule.to_string())
            .join(self.seed.to_string())
    }

    fn failure_path(&self) -> PathBuf {
        self.dir.join("failure.json")
    }

    fn recorded_failure(&self) -> Result<()> {
        let path = self.failure_path();
        if path.exists() {
            let f: Failure = read_json(&path)?;
            if f.config_hash == self.hash {
                return Err(match f.reason.as_str() {
                    "pruned" => Error::PrunedBelowThreshold {
                        accuracy: f.accuracy,
                        threshold: f.threshold,
                    },
                    _ => Error::BaseModelBelowThreshold {
                        accuracy: f.accuracy,
                        threshold: f.threshold,
                    },
                });
            }
        }
        Ok(())
    }

    fn record_failure(&self, e: Error) -> Error {
        let (reason, accuracy, threshold) = match &e {
            Error::BaseModelBelowThreshold { accuracy, threshold } => ("base", *accuracy, *threshold),
            Error::PrunedBelowThreshold { accuracy, threshold } => ("pruned", *accuracy, *threshold),
            _ => return e,
        };
        let f = Failure {
            config_hash: self.hash.to_string(),
            reason: reason.into(),
            accuracy,
            threshold,
        };
        match write_json(&self.failure_path(), &f) {
            Ok(()) => e,
            Err(io) => io,
        }
    }

    fn load_own_checkpoint(&self) -> Result<Option<Model>> {
        let path = self.dir.join("base.ckpt");
        if path.exists() {
            let (model, header) = load_checkpoint(&path)?;
            if header.config_hash == self.hash && header.seed == self.seed {
                return Ok(Some(model));
            }
        }
        Ok(None)
    }

    fn save_base(&self, model: &Model, test_accuracy: f64) -> Result<()> {
        let mut header = header_for(model, self.seed, serde_json::to_value(self.cfg)?, self.hash.to_string());
        header.test_accuracy = Some(test_accuracy);
        save_checkpoint(model, &header, &self.dir.join("base.ckpt"))
    }

    fn base(&self) -> Result<Model> {
        self.recorded_failure()?;
        if let Some(model) = self.load_own_checkpoint()? {
            return Ok(model);
        }
        let spec = model_spec(self.rule);
        match self.cfg.mode {
            Mode::Standard => {
                let train_cfg = self.cfg.train.for_rule(self.rule, self.seed);
                let d = self.data;
                let trained = train_base(spec, &d.base_train, &d.base_val, &d.base_test, &train_cfg)
                    .map_err(|e| self.record_failure(e))?;
                fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
                write_training_log(&trained.log, &self.dir.join("base_log.csv"))?;
                self.save_base(&trained.model, trained.test_accuracy)?;
                Ok(trained.model)
            }
            Mode::RandomControl => {
                let model = Model::init(spec, self.seed)?;
                self.save_base(&model, evaluate(&model, &self.data.base_test)?)?;
                Ok(model)
            }
            Mode::PrunedBase => {
                let path = self.standard_dir().join("base.ckpt");
                if !path.exists() {
                    return Err(Error::MissingManifest(path));
                }
                let (base, _) = load_checkpoint(&path)?;
                let pruned = self.prune(&base).map_err(|e| self.record_failure(e))?;
                self.save_base(&pruned, evaluate(&pruned, &self.data.base_test)?)?;
                Ok(pruned)
            }
        }
    }

    /// Continuous sparsification on the compositional task itself; the
    /// sparsest candidate passing the gate on validation wins.
    fn prune(&self, base: &Model) -> Result<Model> {
        let configs = self.cfg.prune_search.candidates(&self.cfg.mask);
        let d = self.data;
        let runs: Vec<Result<(PruneRow, Subnetwork)>> = configs
            .par_iter()
            .enumerate()
            .map(|(i, mc)| {
                let seed = rng::derive_seed(self.seed, &format!("prune-candidate-{i}"));
                let prov = Provenance {
                    base_model_id: self.id(),
                    rule: self.rule,
                    subroutine: None,
                    config: mc.clone(),
                    seed,
                    repeat: 0,
                };
                let run = train_mask(base, &d.base_train, mc, prov)?;
                let val_acc = evaluate(&apply_subnetwork(base, &run.subnetwork)?, &d.base_val)?;
                let row = PruneRow {
                    candidate: i,
                    start_layer: mc.start_layer,
                    learning_rate: mc.learning_rate,
                    s0: mc.s0,
                    seed,
                    val_acc,
                    passed_gate: val_acc >= SEARCH_GATE,
                    active: run.subnetwork.active(),
                    total: run.subnetwork.total(),
                };
                Ok((row, run.subnetwork))
            })
            .collect();
        let mut rows = Vec::new();
        let mut best: Option<(usize, Subnetwork)> = None;
        for r in runs {
            let (row, sub) = r?;
            if row.passed_gate && best.as_ref().is_none_or(|(a, _)| row.active < *a) {
                best = Some((row.active, sub));
            }
            rows.push(row);
        }
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let mut w = csv::Writer::from_path(self.dir.join("prune.csv"))?;
        for row in &rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(&self.dir, e))?;
        let Some((_, sub)) = best else {
            return Err(Error::PrunedBelowThreshold {
                accuracy: rows.iter().map(|r| r.val_acc).fold(0.0, f64::max),
                threshold: SEARCH_GATE,
            });
        };
        sub.save(&self.dir.join("prune.subnet"))?;
        let pruned = apply_subnetwork(base, &sub)?;
        let test = evaluate(&pruned, &d.base_test)?;
        if test < SEARCH_GATE {
            return Err(Error::PrunedBelowThreshold {
                accuracy: test,
                threshold: SEARCH_GATE,
            });
        }
        Ok(pruned)
    }

    fn provenance(&self, sr: Subroutine, config: MaskConfig, seed: u64, repeat: usize) -> Provenance {
        Provenance {
            base_model_id: self.id(),
            rule: self.rule,
            subroutine: Some(sr),
            config,
            seed,
            repeat,
        }
    }

    fn read_choice(&self, path: &Path) -> Result<Option<Choice>> {
        if path.exists() {
            let c: Choice = read_json(path)?;
            if c.config_hash == self.hash {
                return Ok(Some(c));
            }
        }
        Ok(None)
    }

    /// Returns the chosen config and any fresh search rows.
    fn search(&self, model: &Model, sr: Subroutine, d: &SubroutineData) -> Result<(Choice, Option<Vec<SearchRow>>)> {
        let path = choice_path(&self.dir, sr);
        if let Some(c) = self.read_choice(&path)? {
            return Ok((c, None));
        }
        if self.cfg.mode == Mode::RandomControl {
            let standard = choice_path(&self.standard_dir(), sr);
            let c = self.read_choice(&standard)?.ok_or(Error::MissingManifest(standard))?;
            write_json(&path, &c)?;
            return Ok((c, None));
        }
        let data = SearchData {
            mask_train: &d.mask_train,
            mask_val: &d.mask_val,
            target_val: &d.target_val,
            other_val: &d.other_val,
        };
        let seed = rng::derive_seed(self.seed, &format!("mask/{sr}"));
        let prov = self.provenance(sr, self.cfg.mask.clone(), seed, 0);
        let outcome = hyperparameter_search(model, &self.cfg.mask, &self.cfg.search, &data, &prov)?;
        let rows = outcome.rows.clone();
        let (config, run) = match outcome.winner() {
            Ok(w) => w,
            Err(e) => {
                self.merge_search_rows(&rows)?;
                return Err(e);
            }
        };
        let choice = Choice {
            config_hash: self.hash.to_string(),
            candidate: outcome.best.expect("winner exists"),
            config: config.clone(),
            seed: run.subnetwork.provenance.seed,
        };
        run.subnetwork.save(&subnet_path(&self.dir, sr, 0))?;
        write_json(&path, &choice)?;
        Ok((choice, Some(rows)))
    }

    fn merge_search_rows(&self, rows: &[SearchRow]) -> Result<()> {
        let path = self.dir.join("search.csv");
        let mut all = if path.exists() {
            read_search_table(&path)?
        } else {
            Vec::new()
        };
        if let Some(first) = rows.first() {
            all.retain(|r| r.objective != first.objective);
        }
        all.extend_from_slice(rows);
        all.sort_by(|a, b| a.objective.cmp(&b.objective).then(a.candidate.cmp(&b.candidate)));
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        write_search_table(&all, &path)
    }

    fn masks(&self, model: &Model, sr: Subroutine, d: &SubroutineData, choice: &Choice) -> Result<Vec<Subnetwork>> {
        (0..self.cfg.repeats)
            .map(|k| {
                let path = subnet_path(&self.dir, sr, k);
                let seed = repeat_seed(choice.seed, k);
                if path.exists() {
                    let s = Subnetwork::load(&path)?;
                    if s.provenance.base_model_id == self.id() && s.provenance.config == choice.config && s.provenance.seed == seed {
                        return Ok(s);
                    }
                }
                let prov = self.provenance(sr, choice.config.clone(), seed, k);
                let run = train_mask(model, &d.mask_train, &choice.config, prov)?;
                run.subnetwork.save(&path)?;
                Ok(run.subnetwork)
            })
            .collect()
    }

    fn evaluate(&self, model: &Model, sr: Subroutine, d: &SubroutineData, subnets: &[Subnetwork]) -> Result<Vec<RunRecord>> {
        subnets
            .iter()
            .map(|s| {
                let sub = apply_subnetwork(model, s)?;
                let abl = ablate(model, s)?;
                Ok(RunRecord {
                    base_model_id: self.id(),
                    config_hash: self.hash.to_string(),
                    rule: self.rule,
                    subroutine: sr,
                    seed: self.seed,
                    repeat: s.provenance.repeat,
                    config: s.provenance.config.clone(),
                    acc_sub_target: evaluate(&sub, &d.target_test)?,
                    acc_sub_other: evaluate(&sub, &d.other_test)?,
                    acc_abl_target: evaluate(&abl, &d.target_test)?,
                    acc_abl_other: evaluate(&abl, &d.other_test)?,
                    layers: layer_counts(s),
                })
            })
            .collect()
    }

    /// Runs the branch up to `until`, returning its records and the gate
    /// failures of individual subroutines.
    fn run(&self, until: Stage) -> Result<(Vec<RunRecord>, Vec<String>)> {
        let model = self.base()?;
        let mut records = Vec::new();
        let mut failures = Vec::new();
        if until < Stage::Search {
            return Ok((records, failures));
        }
        for (&sr, d) in &self.data.subroutines {
            let result = (|| {
                let (choice, rows) = self.search(&model, sr, d)?;
                if let Some(rows) = rows {
                    self.merge_search_rows(&rows)?;
                }
                if until < Stage::Masks {
                    return Ok(Vec::new());
                }
                let subnets = self.masks(&model, sr, d, &choice)?;
                if until < Stage::Evaluate {
                    return Ok(Vec::new());
                }
                self.evaluate(&model, sr, d, &subnets)
            })();
            match result {
                Ok(r) => records.extend(r),
                Err(e) if is_gate(&e) => failures.push(format!("{}/{sr}: {e}", self.label())),
                Err(e) => return Err(e),
            }
        }
        if until >= Stage::Evaluate {
            write_records(&self.dir.join("records.jsonl"), &records)?;
        }
        Ok((records, failures))
    }
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs every (rule, seed) branch of `cfg` up to `until`. Completed stages
/// are reused from disk; gate failures stop only their own branch.
pub fn run_stages(cfg: &ExperimentConfig, until: Stage) -> Result<Outcome> {
    cfg.validate()?;
    if cfg.mode != Mode::Standard {
        let standard = Manifest::load(&cfg.experiment_dir())?;
        if standard.config_hash != cfg.hash() {
            return Err(Error::Config(format!(
                "standard run was made with config {}, this config hashes to {}",
                standard.config_hash,
                cfg.hash()
            )));
        }
    }
    let hash = cfg.hash();
    let pool = thread_pool(cfg.jobs)?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut completed = Vec::new();
    for &rule in &cfg.rules {
        let data = load_rule_data(cfg, rule)?;
        if until == Stage::Data {
            continue;
        }
        let results: Vec<Result<(Vec<RunRecord>, Vec<String>)>> = pool.install(|| {
            cfg.seeds
                .par_iter()
                .map(|&seed| {
                    Branch {
                        cfg,
                        hash: &hash,
                        rule,
                        seed,
                        dir: cfg.branch_dir(rule, seed),
                        data: &data,
                    }
                    .run(until)
                })
                .collect()
        });
        for (&seed, r) in cfg.seeds.iter().zip(results) {
            match r {
                Ok((recs, fails)) => {
                    records.extend(recs);
                    if fails.is_empty() {
                        completed.push(format!("{rule}/{seed}"));
                    }
                    failures.extend(fails);
                }
                Err(e) if is_gate(&e) => failures.push(format!("{rule}/{seed}: {e}")),
                Err(e) => return Err(e),
            }
        }
    }
    failures.sort();
    let manifest = Manifest {
        config_hash: hash,
        mode: cfg.mode,
        config: cfg.clone(),
        completed,
        failures: failures.clone(),
    };
    write_json(&Manifest::path(&cfg.mode_dir()), &manifest)?;
    if until < Stage::Analyze {
        return Ok(Outcome {
            records,
            failures,
            report: None,
            overlap: Vec::new(),
        });
    }
    analyze(cfg)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    run_stages(cfg, Stage::Analyze)
}

/// The mask pipeline on untrained models, reusing the standard run's choices.
pub fn run_random_control(cfg: &ExperimentConfig) -> Result<Outcome> {
    run_experiment(&ExperimentConfig {
        mode: Mode::RandomControl,
        ..cfg.clone()
    })
}

/// The mask pipeline on base models first pruned on their own task.
pub fn run_pruned_variant(cfg: &ExperimentConfig) -> Result<Outcome> {
    run_experiment(&ExperimentConfig {
        mode: Mode::PrunedBase,
        ..cfg.clone()
    })
}

/// Builds `report.json`, `summary.csv`, `overlap.json` and `sparsity.csv`
/// from the files of a finished run, without recomputing anything.
pub fn analyze(cfg: &ExperimentConfig) -> Result<Outcome> {
    let dir = cfg.mode_dir();
    let manifest = Manifest::load(&dir)?;
    let mut records = Vec::new();
    let mut overlap = Vec::new();
    let mut subnets = Vec::new();
    for &rule in &cfg.rules {
        for &seed in &cfg.seeds {
            let branch = cfg.branch_dir(rule, seed);
            let path = branch.join("records.jsonl");
            if !path.exists() {
                continue;
            }
            records.extend(read_records(&path)?);
            let mut groups = Vec::new();
            for sr in rule.subroutines() {
                let subs: Vec<Subnetwork> = (0..cfg.repeats)
                    .map(|k| subnet_path(&branch, sr, k))
                    .filter(|p| p.exists())
                    .map(|p| Subnetwork::load(&p))
                    .collect::<Result<_>>()?;
                subnets.extend(subs.iter().cloned());
                groups.push((sr, subs));
            }
            if let Ok(o) = overlap_report(&groups) {
                overlap.push(OverlapEntry { rule, seed, overlap: o });
            }
        }
    }
    for r in &records {
        if r.config_hash != manifest.config_hash {
            return Err(Error::Config(format!(
                "record {}/{} has config {} but the manifest says {}",
                r.rule, r.seed, r.config_hash, manifest.config_hash
            )));
        }
    }
    let report = if records.is_empty() {
        None
    } else {
        let report = summarize(&records, cfg.mode.as_str(), manifest.failures.clone())?;
        write_report(&report, &dir)?;
        write_json(&dir.join("overlap.json"), &overlap)?;
        write_sparsity_csv(&sparsity_report(&subnets), &dir.join("sparsity.csv"))?;
        Some(report)
    };
    Ok(Outcome {
        records,
        failures: manifest.failures,
        report,
        overlap,
    })
}
