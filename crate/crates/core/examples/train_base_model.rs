//! Trains a base model on a compositional odd-one-out task, saves the
//! checkpoint and loads it back.
//!
//! ```text
//! cargo run --release --example train_base_model -- [rule] [train_size]
//! ```

use compostruct::harness::model_spec;
use compostruct::model::{evaluate, header_for, load_checkpoint, save_checkpoint, train_base, EncodedDataset, TrainConfig};
use compostruct::task::{Modality, Role, Rule, Split, TaskSpec};
use compostruct::{language, vision};

fn encode(rule: Rule, split: Split, size: usize) -> compostruct::Result<EncodedDataset> {
    let task = TaskSpec::new(rule, Role::Base, split, size)?;
    match rule.modality() {
        Modality::Vision => EncodedDataset::encode(&vision::build_dataset(&task, 0)?),
        Modality::Language => EncodedDataset::encode(&language::build_dataset(&task, 0)?),
    }
}

fn main() -> compostruct::Result<()> {
    let mut args = std::env::args().skip(1);
    let rule: Rule = args.next().unwrap_or_else(|| "anaphora-singular".into()).parse()?;
    let size: usize = args.next().map_or(1000, |s| s.parse().expect("train size"));
    let (train, val, test) = (
        encode(rule, Split::Train, size)?,
        encode(rule, Split::Val, 200)?,
        encode(rule, Split::Test, 200)?,
    );
    let cfg = TrainConfig {
        max_epochs: 40,
        patience: 10,
        ..TrainConfig::default()
    };
    let trained = train_base(model_spec(rule), &train, &val, &test, &cfg)?;
    for e in trained.log.iter().step_by(5) {
        println!("epoch {:>3} train loss {:.4} val acc {:.3}", e.epoch, e.train_loss, e.val_acc);
    }
    println!("test accuracy {:.3}", trained.test_accuracy);

    let dir = tempfile_dir();
    let path = dir.join(format!("{rule}.ckpt"));
    save_checkpoint(&trained.model, &header_for(&trained.model, cfg.seed, serde_json::to_value(&cfg)?, "example".into()), &path)?;
    let (loaded, header) = load_checkpoint(&path)?;
    println!("saved {} ({} parameters, {} tensors)", path.display(), loaded.param_count(), header.tensors.len());
    assert_eq!(evaluate(&loaded, &test)?, trained.test_accuracy);
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("compostruct-examples");
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}
