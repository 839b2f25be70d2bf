//! Raster odd-one-out stimuli for the inside, contact and number subroutines.

mod scene;
mod shape;

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use scene::{sample_scene, SceneLabels, SceneRequest, VisionScene, CLEARANCE, DRAW_BUDGET, MAX_COUNT};
pub use shape::{
    outline_distance, predicate_contact, predicate_inside, render, Shape, ShapeKind, GRID,
};

use crate::dataset::{Dataset, DatasetMeta, OddOneOutExample, Stimulus, StimulusInput};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::task::{follows_rule, plan_cells, Cell, Modality, OddOtherFactor, TaskSpec};

/// Pixels per raster.
pub const PIXELS: usize = (GRID * GRID) as usize;

/// Odd cells of the base task, drawn uniformly.
pub const BASE_VIOLATORS: [Cell; 3] = [Cell(false, true), Cell(true, false), Cell(false, false)];

/// Per-example `N` for number rules is uniform over this range.
pub const NUMBER_RANGE: std::ops::RangeInclusive<u32> = 2..=5;

#[derive(Serialize, Deserialize)]
struct SceneRecord {
    shapes: Vec<Shape>,
    labels: SceneLabels,
    raster_rle: Vec<u32>,
    #[serde(default = "default_grid")]
    grid_size: i32,
}

fn default_grid() -> i32 {
    GRID
}

impl From<VisionScene> for SceneRecord {
    fn from(scene: VisionScene) -> Self {
        Self {
            raster_rle: rle_encode(&scene.raster()),
            shapes: scene.shapes,
            labels: scene.labels,
            grid_size: scene.grid_size,
        }
    }
}

impl TryFrom<SceneRecord> for VisionScene {
    type Error = Error;

    fn try_from(record: SceneRecord) -> Result<Self> {
        let scene = VisionScene {
            grid_size: record.grid_size,
            shapes: record.shapes,
            labels: record.labels,
        };
        let pixels = (scene.grid_size * scene.grid_size) as usize;
        if rle_decode(&record.raster_rle, pixels)? != scene.raster() {
            return Err(Error::Format {
                what: "scene",
                detail: "raster does not match shapes".into(),
            });
        }
        Ok(scene)
    }
}

impl Serialize for VisionScene {
    fn serialize<Ser: serde::Serializer>(&self, serializer: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        SceneRecord::from(self.clone()).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for VisionScene {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let record = SceneRecord::deserialize(deserializer)?;
        VisionScene::try_from(record).map_err(serde::de::Error::custom)
    }
}

impl Stimulus for VisionScene {
    fn model_input(&self) -> StimulusInput {
        StimulusInput::Raster(self.raster())
    }
}

/// Run lengths of a binary raster, alternating and starting with a run of
/// zeros (possibly empty).
pub fn rle_encode(raster: &[f64]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &v in raster {
        let bit = v != 0.0;
        if bit == current {
            len += 1;
        } else {
            runs.push(len);
            current = bit;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

pub fn rle_decode(runs: &[u32], pixels: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pixels);
    for (i, &run) in runs.iter().enumerate() {
        let value = if i % 2 == 0 { 0.0 } else { 1.0 };
        out.extend(std::iter::repeat_n(value, run as usize));
    }
    if out.len() != pixels {
        return Err(Error::Format {
            what: "raster_rle",
            detail: format!("decodes to {} pixels, expected {pixels}", out.len()),
        });
    }
    Ok(out)
}

/// One odd-one-out example for a vision task.
pub fn generate_example(task: &TaskSpec, rng: &mut Rng) -> Result<OddOneOutExample<VisionScene>> {
    if task.rule.modality() != Modality::Vision {
        return Err(Error::Config(format!("{} is not a vision rule", task.rule)));
    }
    let number = task.rule.uses_number().then(|| rng.random_range(NUMBER_RANGE));
    let plan = plan_cells(task.rule, task.role, &BASE_VIOLATORS, OddOtherFactor::Free, rng)?;
    let mut stimuli = Vec::with_capacity(4);
    for cell in plan.cells {
        stimuli.push(sample_scene(
            SceneRequest {
                rule: task.rule,
                cell,
                number,
            },
            rng,
        )?);
    }
    let example = OddOneOutExample {
        stimuli,
        odd_index: plan.odd_index,
        rule: task.rule,
        role: task.role,
        number,
    };
    check_example(&example)?;
    Ok(example)
}

/// Re-derives the odd index from the scenes' geometry.
pub fn recompute_odd_index(example: &OddOneOutExample<VisionScene>) -> Result<Option<usize>> {
    let mut violators = Vec::new();
    for (i, scene) in example.stimuli.iter().enumerate() {
        let cell = scene.cell(example.rule, example.number);
        if !follows_rule(example.rule, example.role, cell)? {
            violators.push(i);
        }
    }
    Ok(match violators.as_slice() {
        [only] => Some(*only),
        _ => None,
    })
}

fn check_example(example: &OddOneOutExample<VisionScene>) -> Result<()> {
    match recompute_odd_index(example)? {
        Some(i) if i == example.odd_index => Ok(()),
        other => Err(Error::Format {
            what: "vision example",
            detail: format!("odd index {} but geometry says {other:?}", example.odd_index),
        }),
    }
}

/// Deterministic dataset for `task`: the stream is derived from `seed` and the
/// task's data key, which includes the split.
pub fn build_dataset(task: &TaskSpec, seed: u64) -> Result<Dataset<VisionScene>> {
    task.validate()?;
    let mut rng = rng::stream(seed, &format!("vision-data/{}", task.data_key()));
    let examples = (0..task.size)
        .map(|_| generate_example(task, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        meta: DatasetMeta {
            task: *task,
            seed,
            notes: vec![
                "base odd cells drawn uniformly from the three violating cells".into(),
                format!("raster {GRID}x{GRID}, 1-pixel outlines"),
            ],
        },
        examples,
    })
}

/// Plain-text PGM (P2) image of a scene, for inspection.
pub fn to_pgm(scene: &VisionScene) -> String {
    let g = scene.grid_size as usize;
    let raster = scene.raster();
    let mut out = format!("P2\n{g} {g}\n1\n");
    for row in raster.chunks(g) {
        let line: Vec<&str> = row.iter().map(|&v| if v > 0.0 { "1" } else { "0" }).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_pgm(scene: &VisionScene, path: &Path) -> Result<()> {
    fs::write(path, to_pgm(scene)).map_err(|e| Error::io(path, e))
}
