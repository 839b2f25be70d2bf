//! Masks on an untrained network: the same procedure as on a trained base
//! model, but nothing in the weights encodes the task, so ablation leaves
//! the model at chance on both probe partitions.
//!
//! ```text
//! cargo run --release --example random_control -- [rule]
//! ```

use compostruct::harness::model_spec;
use compostruct::model::{evaluate, EncodedDataset, Model};
use compostruct::sparsify::{ablate, apply_subnetwork, train_mask, MaskConfig, Provenance};
use compostruct::task::{Role, Rule, Split, TaskSpec};
use compostruct::language;

fn data(rule: Rule, role: Role, split: Split, size: usize) -> compostruct::Result<EncodedDataset> {
    EncodedDataset::encode(&language::build_dataset(&TaskSpec::new(rule, role, split, size)?, 0)?)
}

fn main() -> compostruct::Result<()> {
    let rule: Rule = std::env::args().nth(1).unwrap_or_else(|| "anaphora-singular".into()).parse()?;
    let model = Model::init(model_spec(rule), 0)?;
    let cfg = MaskConfig {
        start_layer: 2,
        epochs: 30,
        ..MaskConfig::default()
    };
    for sr in rule.subroutines() {
        let provenance = Provenance {
            base_model_id: format!("{rule}/random"),
            rule,
            subroutine: Some(sr),
            config: cfg.clone(),
            seed: 1,
            repeat: 0,
        };
        let run = train_mask(&model, &data(rule, Role::MaskTrain(sr), Split::Train, 1000)?, &cfg, provenance)?;
        let target = data(rule, Role::TestTarget(sr), Split::Test, 200)?;
        let other = data(rule, Role::TestOther(sr), Split::Test, 200)?;
        let kept = apply_subnetwork(&model, &run.subnetwork)?;
        let removed = ablate(&model, &run.subnetwork)?;
        println!(
            "{sr:<10} subnetwork target {:.3} other {:.3} | ablated target {:.3} other {:.3}",
            evaluate(&kept, &target)?,
            evaluate(&kept, &other)?,
            evaluate(&removed, &target)?,
            evaluate(&removed, &other)?
        );
    }
    Ok(())
}
