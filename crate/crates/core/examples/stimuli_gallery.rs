//! Samples one scene per factor cell of every vision rule, checks its labels
//! and writes it as a PGM image.
//!
//! ```text
//! cargo run --release --example stimuli_gallery -- [out_dir]
//! ```

use std::path::PathBuf;

use compostruct::task::{Cell, Rule};
use compostruct::vision::{sample_scene, write_pgm, SceneRequest};

fn main() -> compostruct::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "gallery".into()));
    std::fs::create_dir_all(&out).map_err(|source| compostruct::Error::Io {
        path: out.clone(),
        source,
    })?;
    let mut rng = compostruct::rng::stream(0, "example/gallery");
    for rule in [Rule::InsideContact, Rule::NumberContact, Rule::InsideNumber] {
        let number = rule.uses_number().then_some(3);
        for cell in [Cell(true, true), Cell(true, false), Cell(false, true), Cell(false, false)] {
            let scene = sample_scene(SceneRequest { rule, cell, number }, &mut rng)?;
            scene.verify()?;
            let name = format!("{rule}_{}{}.pgm", sign(cell.0), sign(cell.1));
            write_pgm(&scene, &out.join(&name))?;
            println!(
                "{name:<28} {:<24} shapes {} inside {} contact {}",
                cell.describe(rule),
                scene.shapes.len(),
                scene.labels.inside,
                scene.labels.contact
            );
        }
    }
    Ok(())
}

fn sign(b: bool) -> char {
    if b {
        'p'
    } else {
        'm'
    }
}
