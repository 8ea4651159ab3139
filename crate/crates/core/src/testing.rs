//! Random instance generators shared by unit tests, integration tests and
//! benchmarks.

use rand::Rng;

use crate::types::{BlurField, Image, Kernel, KernelBasis, MixingField};

pub fn random_image(rng: &mut impl Rng, width: usize, height: usize, channels: usize) -> Image {
    Image::from_fn(width, height, channels, |_, _, _| rng.random::<f64>()).expect("valid shape")
}

/// Non-negative, unit-mass kernel with roughly a third of the entries zeroed.
pub fn random_kernel(rng: &mut impl Rng, side: usize) -> Kernel {
    let mut data: Vec<f64> = (0..side * side)
        .map(|_| {
            if rng.random::<f64>() < 0.33 {
                0.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    let c = side * side / 2;
    data[c] += 0.05;
    Kernel::new(side, data)
        .and_then(|k| k.normalized())
        .expect("positive mass")
}

/// Field with `count` random kernels and random per-pixel convex weights.
pub fn random_field(
    rng: &mut impl Rng,
    width: usize,
    height: usize,
    count: usize,
    side: usize,
) -> BlurField {
    let kernels = (0..count).map(|_| random_kernel(rng, side)).collect();
    let maps = (0..count)
        .map(|_| (0..width * height).map(|_| rng.random::<f64>() + 1e-3).collect())
        .collect();
    BlurField::new(
        KernelBasis::new(kernels).expect("valid kernels"),
        MixingField::renormalized(width, height, maps).expect("positive weights"),
    )
    .expect("valid field")
}

/// Piecewise-smooth test scene: a gentle gradient with random rectangles and
/// discs, values in `[lo, hi]`.
pub fn test_scene(
    rng: &mut impl Rng,
    width: usize,
    height: usize,
    channels: usize,
    lo: f64,
    hi: f64,
) -> Image {
    let mut data = Vec::with_capacity(width * height * channels);
    for _ in 0..channels {
        let mut plane: Vec<f64> = (0..height)
            .flat_map(|r| (0..width).map(move |c| 0.3 + 0.2 * (r + c) as f64 / (width + height) as f64))
            .collect();
        for _ in 0..12 {
            let value = rng.random::<f64>();
            let cx = rng.random_range(0..width) as f64;
            let cy = rng.random_range(0..height) as f64;
            let size = rng.random_range(3.0..(width.min(height) as f64 / 4.0).max(4.0));
            let disc = rng.random::<bool>();
            for r in 0..height {
                for c in 0..width {
                    let (dx, dy) = (c as f64 - cx, r as f64 - cy);
                    let inside = if disc {
                        dx * dx + dy * dy <= size * size
                    } else {
                        dx.abs() <= size && dy.abs() <= 0.6 * size
                    };
                    if inside {
                        plane[r * width + c] = value;
                    }
                }
            }
        }
        data.extend(plane.into_iter().map(|v| lo + (hi - lo) * v));
    }
    Image::new(width, height, channels, data).expect("valid shape")
}
