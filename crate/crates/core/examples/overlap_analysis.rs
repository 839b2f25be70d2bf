//! Trains several masks per subroutine on one base model and compares them:
//! IoU among repeats of a subroutine against IoU between the subroutines'
//! intersections, layer by layer.
//!
//! ```text
//! cargo run --release --example overlap_analysis -- [rule] [repeats]
//! ```

use compostruct::analysis::overlap_report;
use compostruct::harness::model_spec;
use compostruct::model::{train_base, EncodedDataset, TrainConfig};
use compostruct::sparsify::{train_mask, MaskConfig, Provenance};
use compostruct::task::{Role, Rule, Split, TaskSpec};
use compostruct::language;

fn data(rule: Rule, role: Role, split: Split, size: usize) -> compostruct::Result<EncodedDataset> {
    EncodedDataset::encode(&language::build_dataset(&TaskSpec::new(rule, role, split, size)?, 0)?)
}

fn main() -> compostruct::Result<()> {
    let mut args = std::env::args().skip(1);
    let rule: Rule = args.next().unwrap_or_else(|| "anaphora-singular".into()).parse()?;
    let repeats: usize = args.next().map_or(3, |s| s.parse().expect("repeats"));
    let base = train_base(
        model_spec(rule),
        &data(rule, Role::Base, Split::Train, 1000)?,
        &data(rule, Role::Base, Split::Val, 200)?,
        &data(rule, Role::Base, Split::Test, 200)?,
        &TrainConfig::default(),
    )?;
    let cfg = MaskConfig {
        start_layer: 2,
        epochs: 30,
        ..MaskConfig::default()
    };
    let mut groups = Vec::new();
    for sr in rule.subroutines() {
        let train = data(rule, Role::MaskTrain(sr), Split::Train, 1000)?;
        let subs = (0..repeats)
            .map(|k| {
                let provenance = Provenance {
                    base_model_id: format!("{rule}/example"),
                    rule,
                    subroutine: Some(sr),
                    config: cfg.clone(),
                    seed: 100 + k as u64,
                    repeat: k,
                };
                train_mask(&base.model, &train, &cfg, provenance).map(|r| r.subnetwork)
            })
            .collect::<compostruct::Result<Vec<_>>>()?;
        groups.push((sr, subs));
    }
    let report = overlap_report(&groups)?;
    for (i, layer) in report.layers.iter().enumerate() {
        let within: Vec<String> = report.within.iter().map(|(sr, v)| format!("{sr} {:.3}", v[i])).collect();
        println!("{layer:<16} within [{}]  between {:.3}", within.join(", "), report.between[i]);
    }
    println!("within exceeds between on every layer: {}", report.ordering_holds);
    Ok(())
}
