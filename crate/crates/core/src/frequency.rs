//! Low/high frequency split of clean images.
//!
//! The low component is a separable Gaussian blur with edge-clamped borders
//! and the high component is the signed remainder, so `low + high` gives the
//! source back up to one rounding step.

use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::tensor::Real;

/// Blur sigma (pixels) used for the decomposition unless overridden.
pub const DEFAULT_BLUR_SIGMA: f64 = 4.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel1D {
    sigma: f64,
    radius: usize,
    taps: Vec<f64>,
}

impl GaussianKernel1D {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn center(&self) -> f64 {
        self.taps[self.radius]
    }
}

/// Truncation radius used when none is given: `ceil(4σ)`.
pub fn default_radius(sigma: f64) -> usize {
    ((4.0 * sigma).ceil() as usize).max(1)
}

/// Normalized, truncated Gaussian with `2·radius + 1` taps.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Result<GaussianKernel1D> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("blur sigma must be positive, got {sigma}")));
    }
    if radius == 0 {
        return Err(Error::config("kernel radius must be at least 1"));
    }
    let r = radius as f64;
    let mut taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    // Force exact symmetry after normalization.
    for i in 0..radius {
        let avg = 0.5 * (taps[i] + taps[2 * radius - i]);
        taps[i] = avg;
        taps[2 * radius - i] = avg;
    }
    Ok(GaussianKernel1D { sigma, radius, taps })
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable blur, horizontal pass then vertical, with replicate borders.
/// Accumulates in `f64`.
pub fn gaussian_blur<T: Real>(image: &Plane<T>, kernel: &GaussianKernel1D) -> Plane<T> {
    let (w, h) = (image.width(), image.height());
    let r = kernel.radius as isize;
    let src = image.data();

    let mut horiz = vec![0.0f64; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut horiz[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (t, &k) in kernel.taps.iter().enumerate() {
                let sx = clamp_index(x as isize + t as isize - r, w);
                acc += k * row[sx].as_f64();
            }
            *o = acc;
        }
    }

    let mut out = vec![T::zero(); w * h];
    let mut acc = vec![0.0f64; w];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        acc.fill(0.0);
        for (t, &k) in kernel.taps.iter().enumerate() {
            let sy = clamp_index(y as isize + t as isize - r, h);
            for (a, &s) in acc.iter_mut().zip(&horiz[sy * w..(sy + 1) * w]) {
                *a += k * s;
            }
        }
        for (d, a) in dst.iter_mut().zip(&acc) {
            *d = T::from_f64(*a);
        }
    }
    Plane::new(w, h, out).expect("dims unchanged")
}

/// Low component and signed high component of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyPair<T = f32> {
    pub low: Plane<T>,
    pub high: Plane<T>,
}

/// `low = blur(image)`, `high = image − low` (unclipped).
pub fn decompose<T: Real>(image: &Plane<T>, sigma: f64) -> Result<FrequencyPair<T>> {
    let kernel = gaussian_kernel(sigma, default_radius(sigma))?;
    decompose_with(image, &kernel)
}

pub fn decompose_with<T: Real>(image: &Plane<T>, kernel: &GaussianKernel1D) -> Result<FrequencyPair<T>> {
    let low = gaussian_blur(image, kernel);
    let high = image.zip_with(&low, "decompose", |a, b| a - b)?;
    Ok(FrequencyPair { low, high })
}

/// Elementwise `low + high`.
pub fn recombine<T: Real>(pair: &FrequencyPair<T>) -> Result<Plane<T>> {
    pair.low.zip_with(&pair.high, "recombine", |a, b| a + b)
}
