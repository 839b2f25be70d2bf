//! A complete, resumable experiment through the harness: datasets, base
//! models, mask search, repeated masks, evaluation and the report. Rerunning
//! reuses everything already on disk.
//!
//! ```text
//! cargo run --release --example full_experiment -- [out_dir]
//! ```

use compostruct::harness::cli::render_report;
use compostruct::harness::{run_experiment, DatasetSizes, ExperimentConfig, SplitSizes};
use compostruct::sparsify::{MaskConfig, SearchSpace};
use compostruct::task::Rule;

fn main() -> compostruct::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out".into());
    let cfg = ExperimentConfig {
        name: "example".into(),
        rules: vec!["anaphora-singular".parse::<Rule>()?],
        seeds: vec![0, 1],
        repeats: 2,
        sizes: DatasetSizes::uniform(SplitSizes::new(1000, 200, 200)),
        mask: MaskConfig {
            epochs: 20,
            ..MaskConfig::default()
        },
        search: SearchSpace {
            learning_rates: vec![0.01],
            s0: vec![0.05, 0.0],
            start_layers: vec![1, 2],
        },
        out: out.into(),
        ..ExperimentConfig::default()
    };
    let outcome = run_experiment(&cfg)?;
    match &outcome.report {
        Some(report) => print!("{}", render_report(report)),
        None => println!("no report"),
    }
    for entry in &outcome.overlap {
        println!(
            "{}/{} overlap ordering holds: {}",
            entry.rule, entry.seed, entry.overlap.ordering_holds
        );
    }
    println!("artifacts under {}", cfg.mode_dir().display());
    Ok(())
}
