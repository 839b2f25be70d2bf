//! Prints odd-one-out examples of the agreement tasks, marking the odd
//! sentence, for every role of a rule.
//!
//! ```text
//! cargo run --release --example agreement_sentences -- [rule]
//! ```

use compostruct::language::{build_dataset, builtin, recompute_odd_index};
use compostruct::task::{Role, Rule, Split, TaskSpec};

fn main() -> compostruct::Result<()> {
    let rule: Rule = std::env::args().nth(1).unwrap_or_else(|| "sv-singular".into()).parse()?;
    let [a, b] = rule.subroutines();
    let vocab = &builtin().0;
    for role in [Role::Base, Role::MaskTrain(a), Role::MaskTrain(b), Role::TestTarget(a), Role::TestTarget(b)] {
        let data = build_dataset(&TaskSpec::new(rule, role, Split::Train, 2)?, 0)?;
        println!("== {rule} {role}");
        for ex in &data.examples {
            assert_eq!(recompute_odd_index(vocab, ex)?, Some(ex.odd_index));
            for (i, s) in ex.stimuli.iter().enumerate() {
                let mark = if i == ex.odd_index { "*" } else { " " };
                println!("  {mark} {}", s.text());
            }
            println!();
        }
    }
    Ok(())
}
