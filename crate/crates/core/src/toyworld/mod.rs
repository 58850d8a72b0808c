//! Procedural toy image world: captioned shape scenes, task-specific sample
//! generators for the full training curriculum, and programmatic oracles
//! that score generated images without any learned metric.

pub mod gen;
pub mod grammar;
pub mod oracle;

pub use gen::{ToySample, Task};
pub use oracle::{oracle_score, OracleSpec, Scores};

use crate::codec::ImageRgb;

/// Canvas side length. Divisible by the codec's 8x8 patch size.
pub const CANVAS: usize = 64;

/// Max-margin 8-color palette: the RGB cube corners.
pub const PALETTE: [[f32; 3]; 8] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 1.0],
    [1.0, 0.0, 1.0],
    [0.0, 0.0, 0.0],
    [1.0, 1.0, 1.0],
];

pub const COLOR_NAMES: [&str; 8] =
    ["red", "green", "blue", "yellow", "cyan", "magenta", "black", "white"];

pub const COLOR_WHITE: usize = 7;
pub const COLOR_BLACK: usize = 6;

/// Backgrounds a scene may use (stated in the caption).
pub const BG_CHOICES: [usize; 2] = [COLOR_WHITE, COLOR_BLACK];

/// Neutral background for reference/subject images; off-palette on purpose.
pub const NEUTRAL_BG: [f32; 3] = [0.78, 0.78, 0.78];

/// 3x3 placement grid. Anchor centers are 21 px apart so two big objects in
/// adjacent cells never overlap.
pub const CELLS: usize = 9;
pub const CELL_NAMES: [&str; 9] = [
    "top left",
    "top center",
    "top right",
    "middle left",
    "center",
    "middle right",
    "bottom left",
    "bottom center",
    "bottom right",
];

pub fn cell_anchor(cell: usize) -> (i32, i32) {
    let col = (cell % 3) as i32;
    let row = (cell / 3) as i32;
    (11 + 21 * col, 11 + 21 * row)
}

pub const RADIUS_SMALL: i32 = 5;
pub const RADIUS_BIG: i32 = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

pub const SHAPES: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Obj {
    pub shape: Shape,
    pub color: usize,
    pub cell: usize,
    pub big: bool,
}

impl Obj {
    pub fn radius(&self) -> i32 {
        if self.big {
            RADIUS_BIG
        } else {
            RADIUS_SMALL
        }
    }
}

/// A renderable scene: background color plus up to three non-overlapping
/// objects on distinct grid cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scene {
    pub bg: usize,
    pub objects: Vec<Obj>,
}

impl Scene {
    pub fn render(&self) -> ImageRgb {
        let mut img = ImageRgb::filled(CANVAS, CANVAS, PALETTE[self.bg]);
        for obj in &self.objects {
            draw(&mut img, obj);
        }
        img
    }
}

fn draw(img: &mut ImageRgb, obj: &Obj) {
    let (cx, cy) = cell_anchor(obj.cell);
    let r = obj.radius();
    let color = PALETTE[obj.color];
    for dy in -r..=r {
        for dx in -r..=r {
            let inside = match obj.shape {
                Shape::Circle => dx * dx + dy * dy <= r * r,
                Shape::Square => true,
                // Upward isoceles triangle: apex at the top, base at the
                // bottom; half-width grows linearly from apex to base.
                Shape::Triangle => 2 * dx.abs() <= dy + r,
            };
            if !inside {
                continue;
            }
            let (x, y) = (cx + dx, cy + dy);
            if x >= 0 && y >= 0 && (x as usize) < img.w && (y as usize) < img.h {
                img.set(x as usize, y as usize, color);
            }
        }
    }
}

/// Subject image for customized/multi-subject tasks: one big object centered
/// on the neutral background.
pub fn render_subject(shape: Shape, color: usize) -> ImageRgb {
    let mut img = ImageRgb::filled(CANVAS, CANVAS, NEUTRAL_BG);
    draw(&mut img, &Obj { shape, color, cell: 4, big: true });
    img
}
