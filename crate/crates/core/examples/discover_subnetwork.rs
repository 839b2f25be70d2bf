//! Trains a base model, then learns a binary mask for one subroutine with
//! continuous sparsification and probes the subnetwork and its ablation.
//!
//! ```text
//! cargo run --release --example discover_subnetwork -- [rule] [subroutine]
//! ```

use compostruct::analysis::clamp_accuracy;
use compostruct::harness::model_spec;
use compostruct::model::{evaluate, train_base, EncodedDataset, TrainConfig};
use compostruct::sparsify::{ablate, apply_subnetwork, train_mask, MaskConfig, Provenance};
use compostruct::task::{Role, Rule, Split, Subroutine, TaskSpec};
use compostruct::language;

fn data(rule: Rule, role: Role, split: Split, size: usize) -> compostruct::Result<EncodedDataset> {
    EncodedDataset::encode(&language::build_dataset(&TaskSpec::new(rule, role, split, size)?, 0)?)
}

fn main() -> compostruct::Result<()> {
    let mut args = std::env::args().skip(1);
    let rule: Rule = args.next().unwrap_or_else(|| "anaphora-singular".into()).parse()?;
    let sr: Subroutine = match args.next() {
        Some(s) => s.parse()?,
        None => rule.subroutines()[0],
    };
    let base = train_base(
        model_spec(rule),
        &data(rule, Role::Base, Split::Train, 1000)?,
        &data(rule, Role::Base, Split::Val, 200)?,
        &data(rule, Role::Base, Split::Test, 200)?,
        &TrainConfig::default(),
    )?;
    println!("base model: test accuracy {:.3}", base.test_accuracy);

    let cfg = MaskConfig {
        start_layer: 2,
        epochs: 30,
        ..MaskConfig::default()
    };
    let provenance = Provenance {
        base_model_id: format!("{rule}/example"),
        rule,
        subroutine: Some(sr),
        config: cfg.clone(),
        seed: 1,
        repeat: 0,
    };
    let run = train_mask(&base.model, &data(rule, Role::MaskTrain(sr), Split::Train, 1000)?, &cfg, provenance)?;
    for e in run.log.iter().step_by(6) {
        println!(
            "epoch {:>2} beta {:>7.2} task {:.4} active {:.3}",
            e.epoch, e.beta, e.task_loss, e.active_fraction
        );
    }
    let sub = &run.subnetwork;
    println!("{sr} subnetwork keeps {}/{} weights", sub.active(), sub.total());

    let target = data(rule, Role::TestTarget(sr), Split::Test, 200)?;
    let other = data(rule, Role::TestOther(sr), Split::Test, 200)?;
    let kept = apply_subnetwork(&base.model, sub)?;
    let removed = ablate(&base.model, sub)?;
    let acc = |m, d| evaluate(m, d).map(clamp_accuracy);
    let (st, so) = (acc(&kept, &target)?, acc(&kept, &other)?);
    let (at, ao) = (acc(&removed, &target)?, acc(&removed, &other)?);
    println!("subnetwork: target {st:.3} other {so:.3}  delta {:+.3}", st - so);
    println!("ablated:    target {at:.3} other {ao:.3}  delta {:+.3}", at - ao);
    Ok(())
}
