//! Synthetic toy datasets for examples and desk-scale tests: class identity
//! is carried by the color and position of a textured rectangle over a
//! gradient background, so both color decomposition and multi-scale spatial
//! features carry signal.

use ndarray::Array3;

use crate::dataset::{LabeledImage, IMAGE_SIDE};
use crate::rng::DetRng;

/// Distinct base colors, one per class.
const PALETTE: [[f64; 3]; 10] = [
    [0.85, 0.20, 0.20],
    [0.20, 0.75, 0.25],
    [0.20, 0.30, 0.85],
    [0.80, 0.75, 0.20],
    [0.75, 0.25, 0.80],
    [0.20, 0.75, 0.75],
    [0.90, 0.55, 0.15],
    [0.55, 0.35, 0.15],
    [0.45, 0.45, 0.50],
    [0.10, 0.10, 0.15],
];

/// Rectangle anchors, one per class, cycling over a 2x2 grid of quadrants.
fn anchor(class: usize) -> (usize, usize) {
    let quadrant = class % 4;
    let r = if quadrant & 1 == 0 { 4 } else { 16 };
    let c = if quadrant & 2 == 0 { 4 } else { 16 };
    (r, c)
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// One synthetic image of the given class.
pub fn synthetic_image(class: usize, id: u64, seed: u64) -> LabeledImage {
    assert!(class < PALETTE.len());
    let mut rng = DetRng::new(seed, id.wrapping_mul(0x2545_f491_4f6c_dd1d));
    let color = PALETTE[class];
    let (ar, ac) = anchor(class);
    let jr = rng.next_below(5) as usize;
    let jc = rng.next_below(5) as usize;
    let h = 9 + rng.next_below(4) as usize;
    let w = 9 + rng.next_below(4) as usize;
    let (r0, c0) = (ar + jr, ac + jc);
    let (r1, c1) = ((r0 + h).min(IMAGE_SIDE), (c0 + w).min(IMAGE_SIDE));

    // Gradient background with a random direction and mild noise.
    let gx = rng.next_f64() - 0.5;
    let gy = rng.next_f64() - 0.5;
    let base = 0.35 + 0.2 * rng.next_f64();
    let mut pixels = Array3::<f64>::zeros((IMAGE_SIDE, IMAGE_SIDE, 3));
    for r in 0..IMAGE_SIDE {
        for c in 0..IMAGE_SIDE {
            let g = base + gx * (c as f64 / 31.0 - 0.5) + gy * (r as f64 / 31.0 - 0.5);
            for k in 0..3 {
                pixels[[r, c, k]] = clamp01(g + 0.05 * (rng.next_f64() - 0.5));
            }
        }
    }
    // Foreground rectangle with per-pixel texture in the class color.
    for r in r0..r1 {
        for c in c0..c1 {
            let t = 0.8 + 0.4 * rng.next_f64();
            for k in 0..3 {
                pixels[[r, c, k]] = clamp01(color[k] * t + 0.05 * (rng.next_f64() - 0.5));
            }
        }
    }
    LabeledImage::new(pixels, Some(class), id)
}

/// `per_class` images for each of `class_count` classes, ids starting at
/// `id_base`, interleaved by class.
pub fn synthetic_images(
    class_count: usize,
    per_class: usize,
    seed: u64,
    id_base: u64,
) -> Vec<LabeledImage> {
    let mut out = Vec::with_capacity(class_count * per_class);
    for i in 0..class_count * per_class {
        let class = i % class_count;
        out.push(synthetic_image(class, id_base + i as u64, seed));
    }
    out
}

/// Disjoint train/test splits (distinct ids and draw streams).
pub fn synthetic_split(
    class_count: usize,
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> (Vec<LabeledImage>, Vec<LabeledImage>) {
    let train = synthetic_images(class_count, train_per_class, seed, 0);
    let test = synthetic_images(
        class_count,
        test_per_class,
        seed ^ 0x5a5a_5a5a,
        (class_count * train_per_class) as u64,
    );
    (train, test)
}
