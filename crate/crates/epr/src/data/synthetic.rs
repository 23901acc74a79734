use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::types::{DatasetSource, SourceImage};
use crate::rng::indexed_stream;
use crate::{Error, Result};

/// Parameters for the procedural glyph dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    /// Image side in pixels (images are square, 3 channels).
    pub image_side: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_classes: 8,
            per_class_train: 100,
            per_class_test: 20,
            image_side: 32,
        }
    }
}

const SHAPES: usize = 8;

// Every color has one channel well above the background ceiling (0.45), so a
// glyph pixel is always separable from noise. Three hues over two-class
// tasks means the hue-to-class polarity rotates from task to task, so later
// tasks genuinely interfere with earlier ones instead of reusing one fixed
// color rule.
const PALETTE: [[f32; 3]; 3] = [
    [0.95, 0.20, 0.20],
    [0.20, 0.95, 0.20],
    [0.20, 0.20, 0.95],
];

const BACKGROUND_MAX: f32 = 0.45;

/// Generates a deterministic image-classification dataset where each class is
/// a unique (shape, color) glyph on uniform noise. The glyph covers a
/// side/2 × side/2 box at a random position, recorded per image so tests can
/// check where a localization method looked.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> Result<DatasetSource> {
    if spec.n_classes < 2 {
        return Err(Error::Dataset(format!(
            "synthetic dataset needs at least 2 classes, got {}",
            spec.n_classes
        )));
    }
    if spec.n_classes > SHAPES * PALETTE.len() {
        return Err(Error::Dataset(format!(
            "synthetic dataset supports at most {} classes, got {}",
            SHAPES * PALETTE.len(),
            spec.n_classes
        )));
    }
    if spec.image_side < 16 {
        return Err(Error::Dataset(format!(
            "synthetic image side must be >= 16, got {}",
            spec.image_side
        )));
    }
    let mut train = Vec::with_capacity(spec.n_classes * spec.per_class_train);
    let mut test = Vec::with_capacity(spec.n_classes * spec.per_class_test);
    let mut next_id = 0u64;
    for class in 0..spec.n_classes {
        let mut rng = indexed_stream(seed, "synthetic-class", class as u64);
        for split in 0..2 {
            let (count, out) = if split == 0 {
                (spec.per_class_train, &mut train)
            } else {
                (spec.per_class_test, &mut test)
            };
            for _ in 0..count {
                let (image, object_box) = render_glyph_image(class, spec.image_side, &mut rng);
                out.push(SourceImage {
                    id: next_id,
                    image,
                    label: class,
                    object_box: Some(object_box),
                });
                next_id += 1;
            }
        }
    }
    Ok(DatasetSource {
        name: "synthetic".into(),
        image_side: spec.image_side,
        channels: 3,
        n_classes: spec.n_classes,
        train,
        test,
    })
}

fn render_glyph_image(
    class: usize,
    side: usize,
    rng: &mut ChaCha8Rng,
) -> (Array3<f32>, [usize; 4]) {
    let mut image = Array3::zeros((3, side, side));
    for v in image.iter_mut() {
        *v = rng.gen_range(0.0..BACKGROUND_MAX);
    }
    let g = side / 2;
    let x0 = rng.gen_range(0..=side - g);
    let y0 = rng.gen_range(0..=side - g);
    // Color cycles fastest so that small class sets stay separable by hue
    // (one online pass is enough to learn them); shape changes every
    // PALETTE.len() classes and distinguishes classes of equal hue.
    let shape = class / PALETTE.len();
    let color = PALETTE[class % PALETTE.len()];
    for di in 0..g {
        for dj in 0..g {
            if glyph_mask(shape, di, dj, g) {
                for c in 0..3 {
                    image[[c, x0 + di, y0 + dj]] = color[c];
                }
            }
        }
    }
    (image, [x0, y0, g, g])
}

/// Whether pixel (di, dj) of a g×g box belongs to the glyph.
fn glyph_mask(shape: usize, di: usize, dj: usize, g: usize) -> bool {
    let c = (g as f32 - 1.0) / 2.0;
    let fi = di as f32;
    let fj = dj as f32;
    let r = g as f32 / 2.0 - 0.5;
    match shape {
        // square
        0 => true,
        // disk
        1 => (fi - c).powi(2) + (fj - c).powi(2) <= r * r,
        // upward triangle
        2 => (fj - c).abs() * 2.0 <= fi,
        // plus sign
        3 => {
            let arm = (g as f32 / 6.0).max(1.0);
            (fi - c).abs() <= arm || (fj - c).abs() <= arm
        }
        // diamond
        4 => (fi - c).abs() + (fj - c).abs() <= r,
        // ring
        5 => {
            let d2 = (fi - c).powi(2) + (fj - c).powi(2);
            d2 <= r * r && d2 >= (r * 0.5) * (r * 0.5)
        }
        // horizontal stripes
        6 => di % 4 < 2,
        // vertical stripes
        _ => dj % 4 < 2,
    }
}
