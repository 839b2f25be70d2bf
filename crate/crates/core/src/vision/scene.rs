use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::shape::{outline_distance, predicate_contact, predicate_inside, render, Shape, ShapeKind, GRID};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::task::{Cell, Rule};

/// Proposal draws allowed per scene before giving up.
pub const DRAW_BUDGET: usize = 10_000;
/// Count range for `-Number` scenes.
pub const MAX_COUNT: u32 = 6;
/// Minimum outline distance between shapes that do not touch, so every
/// non-contact pair has at least two empty pixels between the outlines.
pub const CLEARANCE: i32 = 3;
/// Largest offset of an anchor shape from the grid center.
pub const CENTER_JITTER: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneLabels {
    /// Some shape lies inside another.
    pub inside: bool,
    /// Some pair of shapes touches or overlaps.
    pub contact: bool,
    pub count: usize,
}

impl SceneLabels {
    pub fn compute(shapes: &[Shape]) -> Self {
        let mut inside = false;
        let mut contact = false;
        for (i, a) in shapes.iter().enumerate() {
            for (j, b) in shapes.iter().enumerate() {
                if i == j {
                    continue;
                }
                inside |= predicate_inside(a, b);
                if i < j {
                    contact |= predicate_contact(a, b);
                }
            }
        }
        Self {
            inside,
            contact,
            count: shapes.len(),
        }
    }
}

/// Serialized with its run-length encoded raster; see the parent module.
#[derive(Clone, Debug, PartialEq)]
pub struct VisionScene {
    pub grid_size: i32,
    pub shapes: Vec<Shape>,
    pub labels: SceneLabels,
}

impl VisionScene {
    /// Builds a scene whose labels are recomputed from the shapes.
    pub fn from_shapes(shapes: Vec<Shape>, grid_size: i32) -> Self {
        let labels = SceneLabels::compute(&shapes);
        Self {
            grid_size,
            shapes,
            labels,
        }
    }

    pub fn raster(&self) -> Vec<f64> {
        render(&self.shapes, self.grid_size)
    }

    /// Checks bounds and that the stored labels match the geometry.
    pub fn verify(&self) -> Result<()> {
        if let Some(s) = self.shapes.iter().find(|s| !s.within_bounds(self.grid_size)) {
            return Err(Error::Format {
                what: "scene",
                detail: format!("shape {s:?} out of bounds"),
            });
        }
        if SceneLabels::compute(&self.shapes) != self.labels {
            return Err(Error::Format {
                what: "scene",
                detail: "stored labels disagree with geometry".into(),
            });
        }
        Ok(())
    }

    /// The factor cell this scene realizes under `rule`; `number` is the
    /// example's shared `N` for number rules.
    pub fn cell(&self, rule: Rule, number: Option<u32>) -> Cell {
        let count_ok = || number.is_some_and(|n| self.labels.count == n as usize);
        match rule {
            Rule::InsideContact => Cell(self.labels.inside, self.labels.contact),
            Rule::NumberContact => Cell(count_ok(), self.labels.contact),
            Rule::InsideNumber => Cell(self.labels.inside, count_ok()),
            Rule::SubjectVerb(_) | Rule::Anaphora(_) => Cell(false, false),
        }
    }
}

/// A requested factor cell for one scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneRequest {
    pub rule: Rule,
    pub cell: Cell,
    /// The example's `N` (number rules only).
    pub number: Option<u32>,
}

impl SceneRequest {
    fn describe(&self) -> String {
        match self.number {
            Some(n) => format!("{} {} with N={n}", self.rule, self.cell.describe(self.rule)),
            None => format!("{} {}", self.rule, self.cell.describe(self.rule)),
        }
    }
}

/// Draws scenes until one realizes the requested cell exactly, as judged by
/// the geometric predicates.
///
/// Scene design per rule:
/// * inside-contact: one large shape (size 6..=10) near the center and one
///   small (2..=4).
/// * number-contact: `K` small shapes (2..=3), the first near the center;
///   `+Contact` makes a second shape touch it, everything else is pairwise
///   separated.
/// * inside-number: one medium shape (5..=7) near the center, one small,
///   plus `K - 2` small extras; `+Inside` nests the small shape in the medium
///   one with clearance.
///
/// `K = N` for `+Number`. For `-Number`, `K` is uniform over `1..=6` minus
/// `N`, excluding `K = 1` when the pair factor is `+`.
pub fn sample_scene(request: SceneRequest, rng: &mut Rng) -> Result<VisionScene> {
    if request.rule.uses_number() && request.number.is_none() {
        return Err(Error::Config(format!("{} needs an example-level N", request.rule)));
    }
    for _ in 0..DRAW_BUDGET {
        let Some(shapes) = propose(request, rng) else {
            continue;
        };
        if !shapes.iter().all(|s| s.within_bounds(GRID)) {
            continue;
        }
        let scene = VisionScene::from_shapes(shapes, GRID);
        if scene.cell(request.rule, request.number) != request.cell {
            continue;
        }
        // factors outside the rule are held fixed to avoid confounds
        let clean = match request.rule {
            Rule::InsideContact => scene.labels.count == 2,
            Rule::NumberContact => !scene.labels.inside,
            Rule::InsideNumber => !scene.labels.contact,
            _ => false,
        } && (scene.labels.contact || min_gap(&scene.shapes) >= CLEARANCE);
        if clean {
            return Ok(scene);
        }
    }
    Err(Error::GeneratorExhausted {
        cell: request.describe(),
        draws: DRAW_BUDGET,
    })
}

fn random_kind(rng: &mut Rng) -> ShapeKind {
    if rng.random_bool(0.5) {
        ShapeKind::Circle
    } else {
        ShapeKind::Square
    }
}

fn random_shape(rng: &mut Rng, size: i32) -> Shape {
    let lo = 1 + size;
    let hi = GRID - 2 - size;
    Shape::new(random_kind(rng), rng.random_range(lo..=hi), rng.random_range(lo..=hi), size)
}

/// A shape whose center lies within [`CENTER_JITTER`] of the grid center.
fn centered_shape(rng: &mut Rng, size: i32) -> Shape {
    let c = GRID / 2;
    Shape::new(
        random_kind(rng),
        c + rng.random_range(-CENTER_JITTER..=CENTER_JITTER),
        c + rng.random_range(-CENTER_JITTER..=CENTER_JITTER),
        size,
    )
}

fn near(rng: &mut Rng, anchor: &Shape, size: i32, reach: i32) -> Shape {
    Shape::new(
        random_kind(rng),
        anchor.cx + rng.random_range(-reach..=reach),
        anchor.cy + rng.random_range(-reach..=reach),
        size,
    )
}

fn draw_count(request: SceneRequest, pair_positive: bool, rng: &mut Rng) -> u32 {
    let n = request.number.unwrap_or(2);
    if request.cell.factor(number_factor(request.rule)) {
        return n;
    }
    let lo = if pair_positive { 2 } else { 1 };
    let choices: Vec<u32> = (lo..=MAX_COUNT).filter(|&m| m != n).collect();
    choices[rng.random_range(0..choices.len())]
}

fn number_factor(rule: Rule) -> usize {
    match rule {
        Rule::NumberContact => 0,
        _ => 1,
    }
}

/// Adds `extra` small shapes, each separated from everything placed so far.
fn place_separated(shapes: &mut Vec<Shape>, extra: u32, rng: &mut Rng) -> bool {
    for _ in 0..extra {
        let mut placed = false;
        for _ in 0..200 {
            let size = rng.random_range(2..=3);
            let candidate = random_shape(rng, size);
            if shapes.iter().all(|s| separated(s, &candidate)) {
                shapes.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return false;
        }
    }
    true
}

/// Outlines at least [`CLEARANCE`] apart and neither shape enclosing the other.
fn separated(a: &Shape, b: &Shape) -> bool {
    outline_distance(a, b) >= CLEARANCE && !a.in_interior(b.cx, b.cy) && !b.in_interior(a.cx, a.cy)
}

fn min_gap(shapes: &[Shape]) -> i32 {
    let mut gap = i32::MAX;
    for (i, a) in shapes.iter().enumerate() {
        for b in &shapes[i + 1..] {
            gap = gap.min(outline_distance(a, b));
        }
    }
    gap
}

fn propose(request: SceneRequest, rng: &mut Rng) -> Option<Vec<Shape>> {
    let Cell(first, second) = request.cell;
    match request.rule {
        Rule::InsideContact => {
            let (inside, contact) = (first, second);
            let big_size = rng.random_range(6..=10);
            let big = centered_shape(rng, big_size);
            let small_size = rng.random_range(2..=4);
            let small = if inside {
                near(rng, &big, small_size, big.size - small_size)
            } else if contact {
                near(rng, &big, small_size, big.size + small_size + 1)
            } else {
                random_shape(rng, small_size)
            };
            Some(vec![big, small])
        }
        Rule::NumberContact => {
            let contact = second;
            let count = draw_count(request, contact, rng);
            let a_size = rng.random_range(2..=3);
            let mut shapes = vec![centered_shape(rng, a_size)];
            if contact {
                let b_size = rng.random_range(2..=3);
                shapes.push(near(rng, &shapes[0], b_size, a_size + b_size + 1));
            }
            let extra = count.saturating_sub(shapes.len() as u32);
            place_separated(&mut shapes, extra, rng).then_some(shapes)
        }
        Rule::InsideNumber => {
            let inside = first;
            let count = draw_count(request, inside, rng);
            let medium_size = rng.random_range(5..=7);
            let medium = centered_shape(rng, medium_size);
            let small_size = rng.random_range(2..=3);
            let mut shapes = vec![medium];
            if count >= 2 {
                let small = if inside {
                    near(rng, &medium, small_size, medium.size - small_size - 2)
                } else {
                    random_shape(rng, small_size)
                };
                if !inside && !separated(&medium, &small) {
                    return None;
                }
                shapes.push(small);
            }
            let extra = count.saturating_sub(shapes.len() as u32);
            place_separated(&mut shapes, extra, rng).then_some(shapes)
        }
        Rule::SubjectVerb(_) | Rule::Anaphora(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn all_cells() -> [Cell; 4] {
        [Cell(true, true), Cell(true, false), Cell(false, true), Cell(false, false)]
    }

    #[test]
    fn every_cell_is_realizable() {
        let mut rng = rng::stream(11, "scene-test");
        for rule in Rule::VISION {
            for cell in all_cells() {
                for n in 2..=5 {
                    let number = rule.uses_number().then_some(n);
                    let scene = sample_scene(SceneRequest { rule, cell, number }, &mut rng).unwrap();
                    scene.verify().unwrap();
                    assert_eq!(scene.cell(rule, number), cell);
                    if !rule.uses_number() {
                        break;
                    }
                }
            }
        }
    }

    #[test]
    fn number_counts() {
        let mut rng = rng::stream(12, "scene-test");
        for _ in 0..50 {
            let plus = SceneRequest {
                rule: Rule::NumberContact,
                cell: Cell(true, false),
                number: Some(3),
            };
            assert_eq!(sample_scene(plus, &mut rng).unwrap().labels.count, 3);
            let minus = SceneRequest {
                cell: Cell(false, false),
                ..plus
            };
            let m = sample_scene(minus, &mut rng).unwrap().labels.count;
            assert!(m != 3 && (1..=6).contains(&m), "m = {m}");
        }
    }

    #[test]
    fn number_rule_without_n_is_rejected() {
        let mut rng = rng::stream(1, "x");
        let req = SceneRequest {
            rule: Rule::InsideNumber,
            cell: Cell(true, true),
            number: None,
        };
        assert!(sample_scene(req, &mut rng).is_err());
    }
}
