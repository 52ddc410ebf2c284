//! Generated fixtures: pattern images for training sanity runs and
//! Gaussian clusters for embedding tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::preprocess::Image;
use crate::trainer::Sample;

/// Number of distinct patterns [`pattern_image`] can draw.
pub const PATTERNS: usize = 5;

/// A `size×size` image of pattern `class` (mod [`PATTERNS`]): dark flat,
/// bright flat, fine checkerboard, coarse checkerboard, or a grid of
/// bright dots on a dark ground.
/// Phase, tint and noise vary with `rng`. The patterns differ in
/// luminance and texture scale, so they stay distinguishable after
/// grayscale conversion, horizontal flips and small rotations.
pub fn pattern_image<R: Rng + ?Sized>(class: usize, size: usize, rng: &mut R) -> Image {
    let fine = (size / 28).max(1) as f32;
    let coarse = (size / 4).max(2) as f32;
    let phase: f32 = rng.random_range(0.0..coarse);
    let tint = [
        rng.random_range(0.8f32..1.0),
        rng.random_range(0.8f32..1.0),
        rng.random_range(0.8f32..1.0),
    ];
    let light = Normal::new(0.0f32, 0.04).expect("valid std");
    let checker = |x: usize, y: usize, cell: f32| {
        let a = ((x as f32 + phase) / cell).floor() as i64;
        let b = ((y as f32 + phase) / cell).floor() as i64;
        if (a + b) % 2 == 0 { 0.85 } else { 0.15 }
    };
    let mut img = Image::new(size, size);
    for y in 0..size {
        for x in 0..size {
            let (base, n) = match class % PATTERNS {
                0 => (0.2, light.sample(rng)),
                1 => (0.8, light.sample(rng)),
                2 => (checker(x, y, fine), light.sample(rng)),
                3 => (checker(x, y, coarse), light.sample(rng)),
                _ => {
                    let period = (size / 8).max(4);
                    let dot = period / 4;
                    let (px, py) = ((x + phase as usize) % period, (y + phase as usize) % period);
                    (if px < dot && py < dot { 0.9 } else { 0.15 }, light.sample(rng))
                }
            };
            img.set(x, y, [0usize, 1, 2].map(|c| (base * tint[c] + n).clamp(0.0, 1.0)));
        }
    }
    img
}

/// `n` samples cycling through `classes` patterns, labels `0..classes`.
pub fn pattern_dataset(n: usize, classes: usize, size: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % classes;
            Sample {
                id: format!("synthetic-{i:04}"),
                label,
                image: pattern_image(label, size, &mut rng),
            }
        })
        .collect()
}

/// `k` isotropic Gaussian clusters in `dim` dimensions, `per_cluster`
/// points each, centres `separation` apart along distinct axes.
pub fn gaussian_clusters(
    k: usize,
    per_cluster: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid std");
    let mut points = Vec::with_capacity(k * per_cluster);
    let mut labels = Vec::with_capacity(k * per_cluster);
    for c in 0..k {
        for _ in 0..per_cluster {
            let mut p: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
            p[c % dim] += separation;
            points.push(p);
            labels.push(c);
        }
    }
    (points, labels)
}
