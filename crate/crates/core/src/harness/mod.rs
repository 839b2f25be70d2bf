//! Experiment orchestration: configs, cached datasets, the staged pipeline
//! and the command line.
//!
//! A run directory looks like
//!
//! ```text
//! <out>/<name>/manifest.json
//! <out>/<name>/report.json, summary.csv, overlap.json, sparsity.csv
//! <out>/<name>/<rule>/<seed>/base.ckpt, base_log.csv, search.csv, records.jsonl
//! <out>/<name>/<rule>/<seed>/subnets/<subroutine>-r<k>.subnet
//! <out>/<name>/control-random/...   (same layout)
//! <out>/<name>/pruned/...           (same layout, plus prune.csv)
//! ```
//!
//! Every artifact embeds the config hash; an artifact whose hash matches is
//! reused, so reruns only recompute what is missing.

pub mod cli;
mod config;
mod data;
mod pipeline;

pub use config::{DatasetSizes, ExperimentConfig, Mode, RoleSizes, SplitSizes, TrainSettings};
pub use data::{cache_path, dataset, load_rule_data, model_spec, RuleData, SubroutineData};
pub use pipeline::{
    analyze, model_id, read_records, repeat_seed, run_experiment, run_pruned_variant, run_random_control, run_stages,
    subnet_path, write_records, Choice, Manifest, OverlapEntry, Outcome, PruneRow, Stage,
};
