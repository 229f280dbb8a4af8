//! Procedural grayscale images for tests, self-checks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::plane::ImageGray;

/// Piecewise-smooth scene: shaded background, a few discs and bars, and a
/// faint sinusoidal texture, rescaled into `[lo, hi]`.
pub fn scene(width: usize, height: usize, seed: u64, lo: f32, hi: f32) -> ImageGray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gx: f64 = rng.random_range(-1.0..1.0);
    let gy: f64 = rng.random_range(-1.0..1.0);
    let discs: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(2..6))
        .map(|_| {
            (
                rng.random_range(0.0..width as f64),
                rng.random_range(0.0..height as f64),
                rng.random_range(0.08..0.3) * width.min(height) as f64,
                rng.random_range(-0.6..0.6),
            )
        })
        .collect();
    let bars: Vec<(f64, f64, f64)> = (0..rng.random_range(1..4))
        .map(|_| {
            (
                rng.random_range(0.0..std::f64::consts::PI),
                rng.random_range(0.0..1.0),
                rng.random_range(-0.4..0.4),
            )
        })
        .collect();
    let freq: f64 = rng.random_range(0.15..0.6);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (w, h) = (width as f64, height as f64);

    let mut raw = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64, y as f64);
            let mut v = 0.5 * (gx * fx / w + gy * fy / h);
            for &(cx, cy, r, a) in &discs {
                let d = ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt();
                if d < r {
                    v += a;
                }
            }
            for &(theta, offset, a) in &bars {
                let t = (fx / w) * theta.cos() + (fy / h) * theta.sin();
                if (t - offset).rem_euclid(1.0) < 0.15 {
                    v += a;
                }
            }
            v += 0.08 * (freq * (fx * angle.cos() + fy * angle.sin())).sin();
            raw.push(v);
        }
    }
    let (min, max) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (max - min).max(1e-12);
    let data = raw
        .into_iter()
        .map(|v| lo + (hi - lo) * ((v - min) / span) as f32)
        .collect();
    ImageGray::new(width, height, data).expect("positive dims")
}

/// Uniform random pixels in `[0, 1)`.
pub fn uniform_noise(width: usize, height: usize, seed: u64) -> ImageGray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageGray::from_fn(width, height, |_, _| rng.random::<f32>())
}

/// Alternating 0/1 cells of `cell` pixels.
pub fn checkerboard(width: usize, height: usize, cell: usize) -> ImageGray {
    let cell = cell.max(1);
    ImageGray::from_fn(width, height, |x, y| ((x / cell + y / cell) % 2) as f32)
}
