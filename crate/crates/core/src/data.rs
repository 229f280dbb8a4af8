//! Grayscale image I/O, AWGN synthesis and aligned patch sampling.

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat, ImageReader};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::plane::{ImageGray, Plane};
use crate::tensor::{Dims, Tensor4};

/// SplitMix64 finalizer; used to give every (stream, index) pair its own seed.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for item `index` of stream `stream`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(mix64(master) ^ stream) ^ index)
}

/// Seed stream identifiers.
pub mod streams {
    pub const NOISE: u64 = 1;
    pub const PATCHES: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const EVAL_NOISE: u64 = 5;
}

fn image_err(path: &Path, detail: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    }
}

/// Loads an 8-bit PNG or PGM. Color images are reduced with
/// `Y = 0.299 R + 0.587 G + 0.114 B`; pixels are scaled by `1/255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGray> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLumaA8(g) => g.pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
        DynamicImage::ImageRgb8(rgb) => rgb.pixels().map(|p| luminance(p.0[0], p.0[1], p.0[2])).collect(),
        DynamicImage::ImageRgba8(rgba) => rgba.pixels().map(|p| luminance(p.0[0], p.0[1], p.0[2])).collect(),
        other => {
            return Err(image_err(
                path,
                format!("unsupported pixel format {:?}; only 8-bit images are accepted", other.color()),
            ))
        }
    };
    Plane::new(w, h, data).map_err(|e| image_err(path, e))
}

fn luminance(r: u8, g: u8, b: u8) -> f32 {
    ((0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0) as f32
}

/// Quantizes `round(clamp(x, 0, 1) · 255)`.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Saves as 8-bit grayscale; `.pgm` writes binary PGM, anything else PNG.
pub fn save_image(image: &ImageGray, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    let gray = GrayImage::from_raw(image.width() as u32, image.height() as u32, bytes)
        .expect("buffer length matches dims");
    let format = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
        Some(ext) if ext == "pgm" || ext == "pnm" => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    };
    gray.save_with_format(path, format).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => image_err(path, other),
    })
}

pub fn is_image_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "pgm" | "pnm" | "ppm")
    )
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_path(p))
        .collect();
    out.sort();
    Ok(out)
}

/// Reads a manifest: one image path per line, blank lines and `#`
/// comments skipped, relative paths resolved against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let entries: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_absolute() { p } else { base.join(p) }
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::config(format!("manifest {} lists no images", path.display())));
    }
    Ok(entries)
}

pub fn write_manifest(path: impl AsRef<Path>, images: &[PathBuf]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for p in images {
        text.push_str(&p.display().to_string());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

const RAW_MAGIC: [u8; 4] = *b"FSPL";
const RAW_VERSION: u32 = 1;

/// Writes a lossless plane: `"FSPL"`, u32 version, u32 width, u32 height,
/// then little-endian f32 pixels row-major.
pub fn save_raw_plane(plane: &Plane<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + 4 * plane.len());
    buf.extend_from_slice(&RAW_MAGIC);
    buf.extend_from_slice(&RAW_VERSION.to_le_bytes());
    buf.extend_from_slice(&(plane.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(plane.height() as u32).to_le_bytes());
    for v in plane.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_raw_plane(path: impl AsRef<Path>) -> Result<Plane<f32>> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 16 || buf[..4] != RAW_MAGIC {
        return Err(image_err(path, "not a raw plane file"));
    }
    let word = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap());
    if word(4) != RAW_VERSION {
        return Err(image_err(path, format!("unsupported raw plane version {}", word(4))));
    }
    let (w, h) = (word(8) as usize, word(12) as usize);
    if buf.len() != 16 + 4 * w * h {
        return Err(image_err(path, format!("raw plane length does not match {w}x{h}")));
    }
    let data = buf[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Plane::new(w, h, data).map_err(|e| image_err(path, e))
}

/// A clean image and its unclipped noisy counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySample {
    pub clean: ImageGray,
    pub noisy: Plane<f32>,
    pub sigma255: f64,
    pub seed: u64,
}

impl NoisySample {
    /// The realized noise field `noisy − clean`.
    pub fn noise(&self) -> Plane<f32> {
        self.noisy
            .zip_with(&self.clean, "noise", |a, b| a - b)
            .expect("same dims by construction")
    }
}

/// iid Gaussian noise with standard deviation `sigma255 / 255`; not clipped.
pub fn add_awgn(image: &ImageGray, sigma255: f64, seed: u64) -> Result<NoisySample> {
    if !(sigma255 >= 0.0 && sigma255.is_finite()) {
        return Err(Error::config(format!("noise sigma must be non-negative, got {sigma255}")));
    }
    let std = sigma255 / 255.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = image.clone();
    for v in noisy.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += (z * std) as f32;
    }
    Ok(NoisySample {
        clean: image.clone(),
        noisy,
        sigma255,
        seed,
    })
}

/// Which plane a network is trained to reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetPlane {
    Low,
    High,
    Clean,
    Noise,
}

/// A noisy input plane paired with the target plane cut at the same place.
#[derive(Debug, Clone, Copy)]
pub struct PatchSource<'a> {
    pub label: &'a str,
    pub noisy: &'a Plane<f32>,
    pub target: &'a Plane<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchCoord {
    pub image: usize,
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone)]
pub struct PatchBatch {
    /// `(B, 1, p, p)` noisy patches.
    pub inputs: Tensor4<f32>,
    /// `(B, 1, p, p)` target patches.
    pub targets: Tensor4<f32>,
    pub coords: Vec<PatchCoord>,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

fn check_sources(sources: &[PatchSource<'_>], patch_size: usize) -> Result<()> {
    if patch_size == 0 {
        return Err(Error::config("patch size must be positive"));
    }
    if sources.is_empty() {
        return Err(Error::config("no images to sample patches from"));
    }
    let small: Vec<String> = sources
        .iter()
        .filter(|s| s.noisy.width() < patch_size || s.noisy.height() < patch_size)
        .map(|s| format!("{} ({}x{})", s.label, s.noisy.width(), s.noisy.height()))
        .collect();
    if !small.is_empty() {
        return Err(Error::config(format!(
            "patch size {patch_size} exceeds image dims: {}",
            small.join(", ")
        )));
    }
    for s in sources {
        if !s.noisy.same_dims(s.target) {
            return Err(Error::shape(
                "sample_patches",
                format!("{}: noisy and target planes differ in size", s.label),
            ));
        }
    }
    Ok(())
}

/// Uniform iid top-left corners, with replacement across images and positions.
pub fn sample_patch_coords(
    sources: &[PatchSource<'_>],
    patch_size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<PatchCoord>> {
    check_sources(sources, patch_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let image = rng.random_range(0..sources.len());
            let s = &sources[image];
            PatchCoord {
                image,
                x: rng.random_range(0..=s.noisy.width() - patch_size),
                y: rng.random_range(0..=s.noisy.height() - patch_size),
            }
        })
        .collect())
}

/// Cuts the input and target patches at the given coordinates.
pub fn cut_patches(sources: &[PatchSource<'_>], coords: &[PatchCoord], patch_size: usize) -> PatchBatch {
    let dims = Dims::new(coords.len(), 1, patch_size, patch_size);
    let mut inputs = Tensor4::zeros(dims);
    let mut targets = Tensor4::zeros(dims);
    for (i, c) in coords.iter().enumerate() {
        let s = &sources[c.image];
        s.noisy.crop(c.x, c.y, patch_size, inputs.sample_mut(i));
        s.target.crop(c.x, c.y, patch_size, targets.sample_mut(i));
    }
    PatchBatch {
        inputs,
        targets,
        coords: coords.to_vec(),
    }
}

/// `count` aligned (noisy, target) patch pairs; no augmentation.
pub fn sample_patches(
    sources: &[PatchSource<'_>],
    patch_size: usize,
    count: usize,
    seed: u64,
) -> Result<PatchBatch> {
    let coords = sample_patch_coords(sources, patch_size, count, seed)?;
    Ok(cut_patches(sources, &coords, patch_size))
}
