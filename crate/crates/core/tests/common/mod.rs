//! Helpers shared by the integration tests. Everything here is written
//! independently of the library internals it is used to check.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use fsdn::data::load_image;
use fsdn::{Dims, ImageGray, Tensor4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

/// The natural-image fixtures in name order.
pub fn natural_paths() -> Vec<PathBuf> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(fixture_dir().join("natural"))
        .expect("fixture directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    paths.sort();
    paths
}

pub fn natural_images() -> Vec<(String, ImageGray)> {
    natural_paths()
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (name, load_image(&p).expect("fixture loads"))
        })
        .collect()
}

pub fn randn(rng: &mut ChaCha8Rng, dims: Dims) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_, _, _, _| rng.sample(StandardNormal))
}

pub fn randn_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let plus = f(&probe);
            probe[i] = x[i] - step;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Norm-wise relative error, 0 when both vectors vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let d = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let s = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if s == 0.0 {
        0.0
    } else {
        d / s
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Zero-padded stride-1 cross-correlation by direct summation.
pub fn brute_conv(x: &Tensor4<f64>, w: &Tensor4<f64>, b: &[f64], pad: usize) -> Tensor4<f64> {
    let (xd, wd) = (x.dims(), w.dims());
    let (oh, ow) = (xd.h + 2 * pad + 1 - wd.h, xd.w + 2 * pad + 1 - wd.w);
    Tensor4::from_fn(Dims::new(xd.n, wd.n, oh, ow), |n, o, y, xx| {
        let mut s = b[o];
        for i in 0..xd.c {
            for ky in 0..wd.h {
                for kx in 0..wd.w {
                    let (sy, sx) = ((y + ky) as isize - pad as isize, (xx + kx) as isize - pad as isize);
                    if sy >= 0 && sx >= 0 && (sy as usize) < xd.h && (sx as usize) < xd.w {
                        s += w.get(o, i, ky, kx) * x.get(n, i, sy as usize, sx as usize);
                    }
                }
            }
        }
        s
    })
}

/// Train-mode batch norm from its definition, two-pass statistics.
pub fn brute_batchnorm(x: &Tensor4<f64>, gamma: &[f64], beta: &[f64], eps: f64) -> Tensor4<f64> {
    let d = x.dims();
    let m = (d.n * d.h * d.w) as f64;
    let stats: Vec<(f64, f64)> = (0..d.c)
        .map(|c| {
            let vals = || (0..d.n).flat_map(move |n| (0..d.h).flat_map(move |y| (0..d.w).map(move |xx| x.get(n, c, y, xx))));
            let mean = vals().sum::<f64>() / m;
            let var = vals().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            (mean, var)
        })
        .collect();
    Tensor4::from_fn(d, |n, c, y, xx| {
        let (mean, var) = stats[c];
        gamma[c] * (x.get(n, c, y, xx) - mean) / (var + eps).sqrt() + beta[c]
    })
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}
