use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use super::config::{ExperimentConfig, Mode};
use super::pipeline::{analyze, run_stages, Outcome, Stage};
use crate::analysis::{read_report, Report};
use crate::error::{Error, Result};
use crate::task::{Modality, Role, Rule, Split, TaskSpec};
use crate::{language, vision};

#[derive(Debug, Parser)]
#[command(name = "compostruct", version, about = "Probe small odd-one-out networks for modular subnetworks")]
pub struct Cli {
    /// Experiment config (JSON); defaults apply to missing fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run only this base-model seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate and cache every dataset the experiment needs.
    GenData,
    /// Train (or reuse) base models.
    TrainBase,
    /// Run the mask hyperparameter search.
    Search,
    /// Train the repeated masks with the chosen configurations.
    TrainMask,
    /// Evaluate subnetworks and ablated models into records.
    Evaluate,
    /// Every stage, then the report.
    RunAll,
    /// Mask pipeline on untrained models with the standard run's choices.
    ControlRandom,
    /// Prune base models on their own task, then rerun the pipeline.
    PrunedVariant,
    /// Rebuild report.json, summary.csv, overlap.json and sparsity.csv from disk.
    Analyze,
    /// Print an existing report.
    Report,
    /// Write example stimuli (PGM images or sentences) for inspection.
    ExportStimuli {
        #[arg(long)]
        rule: Rule,
        #[arg(long, default_value = "base")]
        role: Role,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
}

impl Cli {
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(jobs) = self.jobs {
            cfg.jobs = jobs;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn render_report(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mode {} (config {})", report.mode, report.config_hash);
    for d in &report.summaries {
        let _ = writeln!(
            s,
            "{:<18} {:<10} runs {:>2}  d_sub {:+.3} +/- {:.3} ({}/{} > 0)  d_abl {:+.3} +/- {:.3} ({}/{} < 0)  {}",
            d.rule.to_string(),
            d.subroutine.to_string(),
            d.runs,
            d.mean_delta_sub,
            d.std_delta_sub,
            d.positive_sub,
            d.runs,
            d.mean_delta_abl,
            d.std_delta_abl,
            d.negative_abl,
            d.runs,
            d.verdict.describe()
        );
    }
    for f in &report.failures {
        let _ = writeln!(s, "failed: {f}");
    }
    s
}

fn export_stimuli(cfg: &ExperimentConfig, rule: Rule, role: Role, split: Split, count: usize) -> Result<Vec<PathBuf>> {
    let task = TaskSpec::new(rule, role, split, count)?;
    let dir = cfg.out.join("stimuli").join(task.slug());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut written = Vec::new();
    match rule.modality() {
        Modality::Vision => {
            let data = vision::build_dataset(&task, cfg.data_seed)?;
            for (i, ex) in data.examples.iter().enumerate() {
                for (j, scene) in ex.stimuli.iter().enumerate() {
                    let odd = if j == ex.odd_index { "-odd" } else { "" };
                    let path = dir.join(format!("ex{i:03}-{j}{odd}.pgm"));
                    vision::write_pgm(scene, &path)?;
                    written.push(path);
                }
            }
        }
        Modality::Language => {
            let data = language::build_dataset(&task, cfg.data_seed)?;
            let mut text = String::new();
            for (i, ex) in data.examples.iter().enumerate() {
                for (j, s) in ex.stimuli.iter().enumerate() {
                    let odd = if j == ex.odd_index { " *" } else { "" };
                    let _ = writeln!(text, "{i}.{j}{odd} {}", s.text());
                }
            }
            let path = dir.join("sentences.txt");
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn finish(outcome: &Outcome) -> ExitCode {
    if let Some(report) = &outcome.report {
        print!("{}", render_report(report));
    } else {
        for f in &outcome.failures {
            println!("failed: {f}");
        }
    }
    if outcome.succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = cli.experiment()?;
    let stage = |s: Stage| -> Result<ExitCode> {
        let outcome = run_stages(&cfg, s)?;
        Ok(finish(&outcome))
    };
    match &cli.command {
        Command::GenData => stage(Stage::Data),
        Command::TrainBase => stage(Stage::Base),
        Command::Search => stage(Stage::Search),
        Command::TrainMask => stage(Stage::Masks),
        Command::Evaluate => stage(Stage::Evaluate),
        Command::RunAll => stage(Stage::Analyze),
        Command::ControlRandom => Ok(finish(&run_stages(
            &ExperimentConfig {
                mode: Mode::RandomControl,
                ..cfg
            },
            Stage::Analyze,
        )?)),
        Command::PrunedVariant => Ok(finish(&run_stages(
            &ExperimentConfig {
                mode: Mode::PrunedBase,
                ..cfg
            },
            Stage::Analyze,
        )?)),
        Command::Analyze => Ok(finish(&analyze(&cfg)?)),
        Command::Report => {
            let report = read_report(&cfg.mode_dir())?;
            print!("{}", render_report(&report));
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportStimuli {
            rule,
            role,
            split,
            count,
        } => {
            for p in export_stimuli(&cfg, *rule, *role, *split, *count)? {
                println!("{}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Entry point of the `compostruct` binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
