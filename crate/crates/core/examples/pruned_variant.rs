//! Prunes each base model on its own task before the subroutine search, then
//! compares the pruned report with the standard one.
//!
//! ```text
//! cargo run --release --example pruned_variant -- [out_dir]
//! ```

use compostruct::harness::cli::render_report;
use compostruct::harness::{run_experiment, run_pruned_variant, DatasetSizes, ExperimentConfig, SplitSizes};
use compostruct::sparsify::{MaskConfig, SearchSpace};
use compostruct::task::Rule;

fn main() -> compostruct::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out".into());
    let search = SearchSpace {
        learning_rates: vec![0.01],
        s0: vec![0.05],
        start_layers: vec![2],
    };
    let cfg = ExperimentConfig {
        name: "pruned-example".into(),
        rules: vec!["anaphora-plural".parse::<Rule>()?],
        seeds: vec![0],
        repeats: 2,
        sizes: DatasetSizes::uniform(SplitSizes::new(1000, 200, 200)),
        mask: MaskConfig {
            epochs: 20,
            ..MaskConfig::default()
        },
        prune_search: SearchSpace {
            start_layers: vec![0],
            ..search.clone()
        },
        search,
        out: out.into(),
        ..ExperimentConfig::default()
    };
    for (label, outcome) in [("standard", run_experiment(&cfg)?), ("pruned", run_pruned_variant(&cfg)?)] {
        println!("== {label}");
        match &outcome.report {
            Some(report) => print!("{}", render_report(report)),
            None => println!("no report: {}", outcome.failures.join("; ")),
        }
    }
    Ok(())
}
