//! Clamped accuracy differences, mask overlap and sparsity tables.

mod overlap;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparsify::{MaskConfig, Subnetwork};
use crate::task::{Rule, Subroutine};

pub use overlap::{intersect_masks, iou_per_layer, overlap_report, LayerIou, OverlapReport};

/// Chance accuracy of a four-way odd-one-out task.
pub const CHANCE: f64 = 0.25;

pub fn clamp_accuracy(a: f64) -> f64 {
    a.clamp(CHANCE, 1.0)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub name: String,
    pub active: usize,
    pub total: usize,
}

/// The four evaluations of one subnetwork and its ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub base_model_id: String,
    pub config_hash: String,
    pub rule: Rule,
    pub subroutine: Subroutine,
    pub seed: u64,
    pub repeat: usize,
    pub config: MaskConfig,
    pub acc_sub_target: f64,
    pub acc_sub_other: f64,
    pub acc_abl_target: f64,
    pub acc_abl_other: f64,
    pub layers: Vec<LayerCount>,
}

impl RunRecord {
    pub fn active(&self) -> usize {
        self.layers.iter().map(|l| l.active).sum()
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(|l| l.total).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let accs = [self.acc_sub_target, self.acc_sub_other, self.acc_abl_target, self.acc_abl_other];
        if accs.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Format {
                what: "run record",
                detail: format!("accuracy outside [0, 1]: {accs:?}"),
            });
        }
        if self.layers.iter().any(|l| l.active > l.total) {
            return Err(Error::Format {
                what: "run record",
                detail: "active count exceeds total".into(),
            });
        }
        Ok(())
    }

    /// Checks the stored counts against the subnetwork they came from.
    pub fn matches(&self, subnet: &Subnetwork) -> bool {
        self.layers.len() == subnet.masks.len()
            && self
                .layers
                .iter()
                .zip(&subnet.masks)
                .all(|(l, m)| l.name == m.name && l.active == m.active() && l.total == m.total())
    }
}

pub fn layer_counts(subnet: &Subnetwork) -> Vec<LayerCount> {
    subnet
        .masks
        .iter()
        .map(|m| LayerCount {
            name: m.name.clone(),
            active: m.active(),
            total: m.total(),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Differences {
    pub delta_sub: f64,
    pub delta_abl: f64,
}

pub fn difference_metrics(record: &RunRecord) -> Differences {
    Differences {
        delta_sub: clamp_accuracy(record.acc_sub_target) - clamp_accuracy(record.acc_sub_other),
        delta_abl: clamp_accuracy(record.acc_abl_target) - clamp_accuracy(record.acc_abl_other),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Subnetwork and ablation both show the expected sign.
    Modular,
    /// The subnetwork isolates the subroutine but ablating it does not
    /// selectively hurt it.
    SubroutineFoundNotModular,
    NotFound,
}

impl Verdict {
    pub fn describe(self) -> &'static str {
        match self {
            Self::Modular => "structurally compositional",
            Self::SubroutineFoundNotModular => "subroutine found, not modular",
            Self::NotFound => "subroutine not found",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferenceSummary {
    pub rule: Rule,
    pub subroutine: Subroutine,
    pub runs: usize,
    pub mean_delta_sub: f64,
    pub std_delta_sub: f64,
    pub mean_delta_abl: f64,
    pub std_delta_abl: f64,
    /// Runs with `delta_sub > 0`.
    pub positive_sub: usize,
    /// Runs with `delta_abl < 0`.
    pub negative_abl: usize,
    pub signature: bool,
    pub verdict: Verdict,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub fn summarize_group(rule: Rule, subroutine: Subroutine, records: &[&RunRecord]) -> Result<DifferenceSummary> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let diffs: Vec<Differences> = records.iter().map(|r| difference_metrics(r)).collect();
    let subs: Vec<f64> = diffs.iter().map(|d| d.delta_sub).collect();
    let abls: Vec<f64> = diffs.iter().map(|d| d.delta_abl).collect();
    let (mean_delta_sub, std_delta_sub) = mean_std(&subs);
    let (mean_delta_abl, std_delta_abl) = mean_std(&abls);
    let signature = mean_delta_sub > 0.0 && mean_delta_abl < 0.0;
    let verdict = if signature {
        Verdict::Modular
    } else if mean_delta_sub > 0.0 {
        Verdict::SubroutineFoundNotModular
    } else {
        Verdict::NotFound
    };
    Ok(DifferenceSummary {
        rule,
        subroutine,
        runs: records.len(),
        mean_delta_sub,
        std_delta_sub,
        mean_delta_abl,
        std_delta_abl,
        positive_sub: subs.iter().filter(|&&d| d > 0.0).count(),
        negative_abl: abls.iter().filter(|&&d| d < 0.0).count(),
        signature,
        verdict,
    })
}

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub rule: Rule,
    pub subroutine: Subroutine,
    pub seed: u64,
    pub repeat: usize,
    pub acc_sub_target: f64,
    pub acc_sub_other: f64,
    pub acc_abl_target: f64,
    pub acc_abl_other: f64,
    pub delta_sub: f64,
    pub delta_abl: f64,
    pub active: usize,
    pub total: usize,
}

impl From<&RunRecord> for SummaryRow {
    fn from(r: &RunRecord) -> Self {
        let d = difference_metrics(r);
        Self {
            rule: r.rule,
            subroutine: r.subroutine,
            seed: r.seed,
            repeat: r.repeat,
            acc_sub_target: r.acc_sub_target,
            acc_sub_other: r.acc_sub_other,
            acc_abl_target: r.acc_abl_target,
            acc_abl_other: r.acc_abl_other,
            delta_sub: d.delta_sub,
            delta_abl: d.delta_abl,
            active: r.active(),
            total: r.total(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// `standard`, `random_control` or `pruned_base`.
    pub mode: String,
    pub config_hash: String,
    pub summaries: Vec<DifferenceSummary>,
    pub rows: Vec<SummaryRow>,
    /// Branches that stopped at a gate, as `rule/seed: reason`.
    #[serde(default)]
    pub failures: Vec<String>,
}

impl Report {
    pub fn summary(&self, rule: Rule, subroutine: Subroutine) -> Option<&DifferenceSummary> {
        self.summaries.iter().find(|s| s.rule == rule && s.subroutine == subroutine)
    }
}

/// Aggregates records per (rule, subroutine). Records are sorted first, so the
/// report does not depend on the order they were produced in.
pub fn summarize(records: &[RunRecord], mode: &str, failures: Vec<String>) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let config_hash = records[0].config_hash.clone();
    if let Some(r) = records.iter().find(|r| r.config_hash != config_hash) {
        return Err(Error::Config(format!(
            "records from different configurations: {} and {}",
            config_hash, r.config_hash
        )));
    }
    for r in records {
        r.validate()?;
    }
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.rule, r.subroutine, r.seed, r.repeat));
    let mut groups: BTreeMap<(Rule, Subroutine), Vec<&RunRecord>> = BTreeMap::new();
    for r in &sorted {
        groups.entry((r.rule, r.subroutine)).or_default().push(r);
    }
    let summaries = groups
        .iter()
        .map(|(&(rule, sr), rs)| summarize_group(rule, sr, rs))
        .collect::<Result<_>>()?;
    let mut failures = failures;
    failures.sort();
    Ok(Report {
        mode: mode.to_string(),
        config_hash,
        summaries,
        rows: sorted.into_iter().map(SummaryRow::from).collect(),
        failures,
    })
}

/// Writes `report.json` and `summary.csv` into `dir`.
pub fn write_report(report: &Report, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("report.json");
    fs::write(&json, serde_json::to_string_pretty(report)? + "\n").map_err(|e| Error::io(&json, e))?;
    let csv_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))
}

pub fn read_report(dir: &Path) -> Result<Report> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityRow {
    pub rule: Rule,
    pub subroutine: String,
    pub model: String,
    pub repeat: usize,
    pub start_layer: usize,
    pub active: usize,
    pub total: usize,
}

pub fn sparsity_report(subnets: &[Subnetwork]) -> Vec<SparsityRow> {
    subnets
        .iter()
        .map(|s| SparsityRow {
            rule: s.provenance.rule,
            subroutine: s.provenance.objective(),
            model: s.provenance.base_model_id.clone(),
            repeat: s.provenance.repeat,
            start_layer: s.start_layer,
            active: s.active(),
            total: s.total(),
        })
        .collect()
}

pub fn write_sparsity_csv(rows: &[SparsityRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
