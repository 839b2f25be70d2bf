use serde::{Deserialize, Serialize};

/// Default raster side length in pixels.
pub const GRID: i32 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Square,
}

/// A 1-pixel outline shape on an integer grid.
///
/// `size` is the radius of a circle or the half side length of a square.
/// A square's outline is the set of pixels at Chebyshev distance exactly
/// `size` from the center. A circle's outline is the set of pixels whose
/// Euclidean distance `d` from the center satisfies `size - 1/2 <= d < size + 1/2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    pub cx: i32,
    pub cy: i32,
    pub size: i32,
}

impl Shape {
    pub const MIN_SIZE: i32 = 2;

    pub fn new(kind: ShapeKind, cx: i32, cy: i32, size: i32) -> Self {
        Self { kind, cx, cy, size }
    }

    /// Whether the shape has valid size and stays at least one pixel away
    /// from every image border.
    pub fn within_bounds(&self, grid: i32) -> bool {
        self.size >= Self::MIN_SIZE
            && self.cx - self.size >= 1
            && self.cy - self.size >= 1
            && self.cx + self.size <= grid - 2
            && self.cy + self.size <= grid - 2
    }

    /// Squared distance compared in quarter-pixel units: returns `4 * d^2`.
    fn dist4(&self, x: i32, y: i32) -> i32 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        4 * (dx * dx + dy * dy)
    }

    pub fn on_outline(&self, x: i32, y: i32) -> bool {
        match self.kind {
            ShapeKind::Square => (x - self.cx).abs().max((y - self.cy).abs()) == self.size,
            ShapeKind::Circle => {
                let d4 = self.dist4(x, y);
                let inner = (2 * self.size - 1).pow(2);
                let outer = (2 * self.size + 1).pow(2);
                inner <= d4 && d4 < outer
            }
        }
    }

    /// Pixels enclosed by the outline, excluding the outline itself.
    pub fn in_interior(&self, x: i32, y: i32) -> bool {
        match self.kind {
            ShapeKind::Square => (x - self.cx).abs().max((y - self.cy).abs()) < self.size,
            ShapeKind::Circle => self.dist4(x, y) < (2 * self.size - 1).pow(2),
        }
    }

    pub fn outline_pixels(&self) -> Vec<(i32, i32)> {
        let r = self.size;
        let mut out = Vec::with_capacity((8 * r) as usize);
        for y in self.cy - r..=self.cy + r {
            for x in self.cx - r..=self.cx + r {
                if self.on_outline(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// True iff every outline pixel of `a` lies strictly inside the region
/// enclosed by `b`'s outline.
pub fn predicate_inside(a: &Shape, b: &Shape) -> bool {
    a.outline_pixels().iter().all(|&(x, y)| b.in_interior(x, y))
}

/// True iff some outline pixels of `a` and `b` are within Chebyshev
/// distance 1 (touching or overlapping).
pub fn predicate_contact(a: &Shape, b: &Shape) -> bool {
    outline_distance(a, b) <= 1
}

/// Minimum Chebyshev distance between the outlines of `a` and `b`.
pub fn outline_distance(a: &Shape, b: &Shape) -> i32 {
    // bounding boxes farther apart than 1 pixel cannot touch
    let gap_x = (a.cx - b.cx).abs() - a.size - b.size;
    let gap_y = (a.cy - b.cy).abs() - a.size - b.size;
    let box_gap = gap_x.max(gap_y);
    if box_gap > 1 {
        return box_gap;
    }
    let pb = b.outline_pixels();
    let mut best = i32::MAX;
    for (ax, ay) in a.outline_pixels() {
        for &(bx, by) in &pb {
            best = best.min((ax - bx).abs().max((ay - by).abs()));
            if best == 0 {
                return 0;
            }
        }
    }
    best
}

/// Renders outlines as 1.0 on a 0.0 background, row-major.
pub fn render(shapes: &[Shape], grid: i32) -> Vec<f64> {
    let mut raster = vec![0.0; (grid * grid) as usize];
    for shape in shapes {
        for (x, y) in shape.outline_pixels() {
            if (0..grid).contains(&x) && (0..grid).contains(&y) {
                raster[(y * grid + x) as usize] = 1.0;
            }
        }
    }
    raster
}
