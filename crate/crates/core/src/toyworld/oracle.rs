//! Programmatic scoring of generated images.
//!
//! Detection is nearest-palette-color classification followed by connected
//! components; shape class falls out of the component's bounding-box fill
//! ratio (square 1.0, circle ~0.7, triangle ~0.5 — well separated even with
//! codec blur at the edges).

use crate::codec::ImageRgb;

use super::{cell_anchor, Obj, Scene, Shape, CANVAS, CELLS, PALETTE};

/// One required object: shape + color at a grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Atom {
    pub shape: Shape,
    pub color: usize,
    pub cell: usize,
}

impl Atom {
    pub fn of(obj: &Obj) -> Atom {
        Atom { shape: obj.shape, color: obj.color, cell: obj.cell }
    }
}

/// Pixels that must stay equal to a reference image.
#[derive(Clone)]
pub struct PreservedRegion {
    pub mask: Vec<bool>,
    pub reference: ImageRgb,
}

/// Machine-checkable description of what a generated image must satisfy.
#[derive(Clone, Default)]
pub struct OracleSpec {
    pub bg: usize,
    pub required: Vec<Atom>,
    /// Cells that must hold no object (removal edits).
    pub empty_cells: Vec<usize>,
    /// Indices into `required` that an edit introduced or modified.
    pub edited: Vec<usize>,
    /// Subjects whose shape+color must appear somewhere (identity score).
    pub identity: Vec<(Shape, usize)>,
    pub preserved: Option<PreservedRegion>,
}

impl OracleSpec {
    pub fn for_scene(scene: &Scene) -> OracleSpec {
        OracleSpec {
            bg: scene.bg,
            required: scene.objects.iter().map(Atom::of).collect(),
            ..Default::default()
        }
    }

    /// Restriction to what the edit touched: the edited atoms plus the
    /// cells required to be empty.
    pub fn edited_subspec(&self) -> OracleSpec {
        OracleSpec {
            bg: self.bg,
            required: self.edited.iter().map(|&i| self.required[i]).collect(),
            empty_cells: self.empty_cells.clone(),
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Scores {
    pub compliance: f32,
    pub identity: f32,
    pub locality_mse: f32,
}

#[derive(Clone, Debug)]
pub struct Component {
    pub color: usize,
    pub area: usize,
    pub center: (f32, f32),
    pub shape: Shape,
}

const MIN_AREA: usize = 25;
/// Half the anchor spacing: a component belongs to the nearest cell only.
const CELL_TOLERANCE: f32 = 10.5;

pub fn nearest_palette(rgb: [f32; 3]) -> usize {
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for (i, p) in PALETTE.iter().enumerate() {
        let d = (rgb[0] - p[0]).powi(2) + (rgb[1] - p[1]).powi(2) + (rgb[2] - p[2]).powi(2);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Connected components of non-background palette classes, 4-connected.
pub fn detect_components(img: &ImageRgb, bg: usize) -> Vec<Component> {
    let (h, w) = (img.h, img.w);
    let classes: Vec<usize> = (0..h * w)
        .map(|p| nearest_palette(img.get(p % w, p / w)))
        .collect();
    let mut visited = vec![false; h * w];
    let mut out = Vec::new();

    for start in 0..h * w {
        if visited[start] || classes[start] == bg {
            continue;
        }
        let class = classes[start];
        let mut stack = vec![start];
        visited[start] = true;
        let mut pixels = Vec::new();
        while let Some(p) = stack.pop() {
            pixels.push(p);
            let (x, y) = (p % w, p / w);
            let mut push = |q: usize| {
                if !visited[q] && classes[q] == class {
                    visited[q] = true;
                    stack.push(q);
                }
            };
            if x > 0 {
                push(p - 1);
            }
            if x + 1 < w {
                push(p + 1);
            }
            if y > 0 {
                push(p - w);
            }
            if y + 1 < h {
                push(p + w);
            }
        }
        if pixels.len() < MIN_AREA {
            continue;
        }
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0usize, 0usize);
        let mut sx = 0.0f32;
        let mut sy = 0.0f32;
        for &p in &pixels {
            let (x, y) = (p % w, p / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            sx += x as f32;
            sy += y as f32;
        }
        let bbox_area = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f32;
        let fill = pixels.len() as f32 / bbox_area;
        let shape = if fill >= 0.85 {
            Shape::Square
        } else if fill >= 0.585 {
            Shape::Circle
        } else {
            Shape::Triangle
        };
        out.push(Component {
            color: class,
            area: pixels.len(),
            center: (sx / pixels.len() as f32, sy / pixels.len() as f32),
            shape,
        });
    }
    out
}

fn near_cell(center: (f32, f32), cell: usize) -> bool {
    let (ax, ay) = cell_anchor(cell);
    let dx = center.0 - ax as f32;
    let dy = center.1 - ay as f32;
    dx.abs() <= CELL_TOLERANCE && dy.abs() <= CELL_TOLERANCE
}

/// Extract the single subject of a reference image (object on the neutral
/// background, which classifies as white).
pub fn subject_of_reference(img: &ImageRgb) -> Option<(Shape, usize)> {
    let comps = detect_components(img, super::COLOR_WHITE);
    comps
        .into_iter()
        .max_by_key(|c| c.area)
        .map(|c| (c.shape, c.color))
}

/// Score an image against a spec. Compliance averages the required-object
/// and required-empty-cell atoms; identity is the fraction of subjects whose
/// shape+color appear anywhere; locality is the MSE over the preserved
/// region (0 when the spec has none).
pub fn oracle_score(img: &ImageRgb, spec: &OracleSpec) -> Scores {
    debug_assert_eq!(img.h, CANVAS);
    let comps = detect_components(img, spec.bg);

    let mut satisfied = 0usize;
    for atom in &spec.required {
        let hit = comps
            .iter()
            .any(|c| c.color == atom.color && c.shape == atom.shape && near_cell(c.center, atom.cell));
        if hit {
            satisfied += 1;
        }
    }
    for &cell in &spec.empty_cells {
        debug_assert!(cell < CELLS);
        let occupied = comps.iter().any(|c| near_cell(c.center, cell));
        if !occupied {
            satisfied += 1;
        }
    }
    let total = spec.required.len() + spec.empty_cells.len();
    let compliance = if total == 0 { 1.0 } else { satisfied as f32 / total as f32 };

    let identity = if spec.identity.is_empty() {
        1.0
    } else {
        let hits = spec
            .identity
            .iter()
            .filter(|(shape, color)| {
                comps.iter().any(|c| c.shape == *shape && c.color == *color)
            })
            .count();
        hits as f32 / spec.identity.len() as f32
    };

    let locality_mse = match &spec.preserved {
        Some(region) => img.masked_mse(&region.reference, &region.mask),
        None => 0.0,
    };

    Scores { compliance, identity, locality_mse }
}

/// Pixel mask excluding square blocks around the given cells' anchors.
/// Block half-extent covers the biggest object plus blur margin.
pub fn mask_excluding_cells(cells: &[usize]) -> Vec<bool> {
    const HALF: i32 = 12;
    let mut mask = vec![true; CANVAS * CANVAS];
    for &cell in cells {
        let (ax, ay) = cell_anchor(cell);
        for y in (ay - HALF).max(0)..=(ay + HALF).min(CANVAS as i32 - 1) {
            for x in (ax - HALF).max(0)..=(ax + HALF).min(CANVAS as i32 - 1) {
                mask[y as usize * CANVAS + x as usize] = false;
            }
        }
    }
    mask
}

/// Full-image preserved region.
pub fn full_mask() -> Vec<bool> {
    vec![true; CANVAS * CANVAS]
}
