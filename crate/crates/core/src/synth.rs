//! Procedurally generated piecewise-constant test images.

use crate::data::GrayImage;
use crate::rng::{RngStream, StreamKind};

/// A flat background overlaid with 3–8 random axis-aligned rectangles and
/// discs, each of a single random intensity in `[0.1, 0.9]`.
pub fn piecewise_constant(width: usize, height: usize, rng: &mut RngStream) -> GrayImage {
    let level = |rng: &mut RngStream| 0.1 + 0.8 * rng.uniform();
    let mut px = vec![level(rng); width * height];
    let shapes = 3 + rng.below(6);
    for _ in 0..shapes {
        let v = level(rng);
        let cx = rng.uniform() * width as f64;
        let cy = rng.uniform() * height as f64;
        let size = (0.1 + 0.3 * rng.uniform()) * width.min(height) as f64;
        let disc = rng.uniform() < 0.5;
        let aspect = 0.5 + rng.uniform();
        for y in 0..height {
            for x in 0..width {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let inside = if disc {
                    dx * dx + dy * dy <= size * size
                } else {
                    dx.abs() <= size * aspect && dy.abs() <= size / aspect
                };
                if inside {
                    px[y * width + x] = v;
                }
            }
        }
    }
    GrayImage::new(width, height, px).expect("levels lie in [0, 1]")
}

/// `count` images from the synthesis stream `index` of `seed`.
pub fn dataset(count: usize, width: usize, height: usize, seed: u64, index: u32) -> Vec<GrayImage> {
    let mut rng = RngStream::named(seed, StreamKind::Synth, index);
    (0..count)
        .map(|_| piecewise_constant(width, height, &mut rng))
        .collect()
}
