//! Whole-image denoising pipelines, PSNR/SSIM and dataset reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, TrainingMeta};
use crate::data::{add_awgn, derive_seed, load_image, streams};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::network::{MappingMode, Network};
use crate::plane::{ImageGray, Plane};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_WINDOW_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Anything that maps a noisy plane to a same-sized output plane.
pub trait PlaneModel: Sync {
    fn predict(&self, input: &Plane<f32>) -> Result<Plane<f32>>;
    fn mapping_mode(&self) -> MappingMode;
}

impl PlaneModel for Network<f32> {
    fn predict(&self, input: &Plane<f32>) -> Result<Plane<f32>> {
        if self.mode() != Mode::Inference {
            return Err(Error::config(format!("network {} is not in inference mode", self.spec().name)));
        }
        let out = self.infer(&input.to_tensor())?;
        Plane::from_tensor(&out)
    }

    fn mapping_mode(&self) -> MappingMode {
        Network::mapping_mode(self)
    }
}

fn check_same(context: &str, a: &Plane<f32>, b: &Plane<f32>) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(Error::shape(
            context,
            format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height()),
        ))
    }
}

/// Low prediction plus high prediction, before clamping.
pub fn denoise_dual_unclamped(noisy: &Plane<f32>, low: &impl PlaneModel, high: &impl PlaneModel) -> Result<Plane<f32>> {
    let (l, h) = rayon::join(|| low.predict(noisy), || high.predict(noisy));
    let (l, h) = (l?, h?);
    check_same("denoise_dual", noisy, &l)?;
    l.zip_with(&h, "denoise_dual", |a, b| a + b)
}

pub fn denoise_dual(noisy: &Plane<f32>, low: &impl PlaneModel, high: &impl PlaneModel) -> Result<ImageGray> {
    Ok(denoise_dual_unclamped(noisy, low, high)?.clamp01())
}

/// Residual models predict the noise, direct models the clean image.
pub fn denoise_single(noisy: &Plane<f32>, net: &impl PlaneModel) -> Result<ImageGray> {
    let out = net.predict(noisy)?;
    check_same("denoise_single", noisy, &out)?;
    let img = match net.mapping_mode() {
        MappingMode::Residual => noisy.zip_with(&out, "denoise_single", |n, r| n - r)?,
        MappingMode::Direct => out,
    };
    Ok(img.clamp01())
}

fn clamped_f64(p: &Plane<f32>) -> Vec<f64> {
    p.data().iter().map(|&v| (v as f64).clamp(0.0, 1.0)).collect()
}

/// `10·log10(1/MSE)` on clamped `[0,1]` images, capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: &Plane<f32>, test: &Plane<f32>) -> Result<f64> {
    check_same("psnr", reference, test)?;
    let (a, b) = (clamped_f64(reference), clamped_f64(test));
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn ssim_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_WINDOW_SIGMA * SSIM_WINDOW_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable valid-mode filter: output is `(w − k + 1) × (h − k + 1)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (t, &kv) in k.iter().enumerate() {
            let row = &tmp[(y + t) * ow..(y + t + 1) * ow];
            for (o, &v) in out[y * ow..(y + 1) * ow].iter_mut().zip(row) {
                *o += kv * v;
            }
        }
    }
    out
}

/// Mean SSIM over all valid 11×11 Gaussian windows (σ = 1.5) on clamped images.
pub fn ssim(reference: &Plane<f32>, test: &Plane<f32>) -> Result<f64> {
    check_same("ssim", reference, test)?;
    let (w, h) = (reference.width(), reference.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            format!("image {w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let (a, b) = (clamped_f64(reference), clamped_f64(test));
    let k = ssim_window();
    let prod = |f: &dyn Fn(f64, f64) -> f64| a.iter().zip(&b).map(|(&x, &y)| f(x, y)).collect::<Vec<f64>>();
    let mu_a = filter_valid(&a, w, h, &k);
    let mu_b = filter_valid(&b, w, h, &k);
    let e_aa = filter_valid(&prod(&|x, _| x * x), w, h, &k);
    let e_bb = filter_valid(&prod(&|_, y| y * y), w, h, &k);
    let e_ab = filter_valid(&prod(&|x, y| x * y), w, h, &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// A trained network with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub label: String,
    pub network: Network<f32>,
    pub meta: Option<TrainingMeta>,
}

impl LoadedModel {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ckpt = load_checkpoint(path)?;
        Ok(LoadedModel {
            label: path.display().to_string(),
            network: ckpt.network,
            meta: Some(ckpt.meta),
        })
    }

    pub fn from_network(label: impl Into<String>, mut network: Network<f32>) -> Self {
        network.set_mode(Mode::Inference);
        LoadedModel {
            label: label.into(),
            network,
            meta: None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Models {
    Dual { low: LoadedModel, high: LoadedModel },
    Single(LoadedModel),
}

impl Models {
    pub fn denoise(&self, noisy: &Plane<f32>) -> Result<ImageGray> {
        match self {
            Models::Dual { low, high } => denoise_dual(noisy, &low.network, &high.network),
            Models::Single(m) => denoise_single(noisy, &m.network),
        }
    }

    pub fn method(&self) -> &'static str {
        match self {
            Models::Dual { .. } => "dual",
            Models::Single(m) => match m.network.mapping_mode() {
                MappingMode::Residual => "single-residual",
                MappingMode::Direct => "single-direct",
            },
        }
    }

    fn labels(&self) -> Vec<String> {
        match self {
            Models::Dual { low, high } => vec![low.label.clone(), high.label.clone()],
            Models::Single(m) => vec![m.label.clone()],
        }
    }

    fn blur_sigma(&self) -> Option<f64> {
        match self {
            Models::Dual { low, .. } => low.meta.map(|m| m.blur_sigma as f64),
            Models::Single(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub method: String,
    pub models: Vec<String>,
    pub sigma255: f64,
    pub blur_sigma: Option<f64>,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub color: String,
    pub ssim: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub path: String,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    /// Input PSNR of the noisy image before denoising.
    pub noisy_psnr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub images: Vec<ImageRecord>,
    /// Means over the images without errors; NaN (`null` in JSON) when none.
    #[serde(deserialize_with = "null_as_nan")]
    pub mean_psnr_db: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub mean_ssim: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub mean_noisy_psnr_db: f64,
    pub warnings: Vec<String>,
}

fn null_as_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl EvalReport {
    pub fn from_records(config: EvalConfig, images: Vec<ImageRecord>) -> Self {
        let ok = || images.iter().filter(|r| r.error.is_none());
        let warnings = images
            .iter()
            .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.path)))
            .collect();
        EvalReport {
            mean_psnr_db: mean(ok().filter_map(|r| r.psnr_db)),
            mean_ssim: mean(ok().filter_map(|r| r.ssim)),
            mean_noisy_psnr_db: mean(ok().filter_map(|r| r.noisy_psnr_db)),
            config,
            images,
            warnings,
        }
    }

    pub fn evaluated(&self) -> usize {
        self.images.iter().filter(|r| r.error.is_none()).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Plain-text table: one row per noise level and method, then per-image rows.
    pub fn to_table(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "{:>6}  {:<16} {:>10} {:>8}", "sigma", "method", "PSNR(dB)", "SSIM");
        let _ = writeln!(s, "{:>6}  {:<16} {:>10.2} {:>8}", fmt_sigma(c.sigma255), "noisy input", self.mean_noisy_psnr_db, "-");
        let _ = writeln!(
            s,
            "{:>6}  {:<16} {:>10.2} {:>8.4}",
            fmt_sigma(c.sigma255),
            c.method,
            self.mean_psnr_db,
            self.mean_ssim
        );
        let _ = writeln!(s);
        for r in &self.images {
            match (&r.error, r.psnr_db, r.ssim) {
                (None, Some(p), Some(q)) => {
                    let _ = writeln!(s, "  {:>8.2} {:>8.4}  {}", p, q, r.path);
                }
                (err, _, _) => {
                    let _ = writeln!(s, "  {:>8} {:>8}  {} ({})", "-", "-", r.path, err.as_deref().unwrap_or("no result"));
                }
            }
        }
        if !self.warnings.is_empty() {
            let _ = writeln!(s, "\n{} warning(s)", self.warnings.len());
        }
        s
    }
}

fn fmt_sigma(s: f64) -> String {
    if s.fract() == 0.0 {
        format!("{}", s as i64)
    } else {
        format!("{s}")
    }
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn evaluate_one(clean: &ImageGray, models: &Models, sigma255: f64, seed: u64) -> Result<(f64, f64, f64)> {
    let sample = add_awgn(clean, sigma255, seed)?;
    let out = models.denoise(&sample.noisy)?;
    Ok((psnr(clean, &out)?, ssim(clean, &out)?, psnr(clean, &sample.noisy)?))
}

/// Evaluates already loaded clean images. Image `i` gets noise seeded from `(seed, i)`.
pub fn evaluate_images(
    images: &[(String, Result<ImageGray>)],
    sigma255: f64,
    models: &Models,
    seed: u64,
) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(Error::config("evaluation set is empty"));
    }
    if !(sigma255 >= 0.0 && sigma255.is_finite()) {
        return Err(Error::config(format!("noise sigma must be non-negative, got {sigma255}")));
    }
    let records: Vec<ImageRecord> = images
        .par_iter()
        .enumerate()
        .map(|(i, (label, img))| {
            let result = img.as_ref().map_err(|e| e.to_string()).and_then(|img| {
                evaluate_one(img, models, sigma255, derive_seed(seed, streams::EVAL_NOISE, i as u64))
                    .map_err(|e| e.to_string())
            });
            match result {
                Ok((p, q, n)) => ImageRecord {
                    path: label.clone(),
                    psnr_db: Some(p),
                    ssim: Some(q),
                    noisy_psnr_db: Some(n),
                    error: None,
                },
                Err(e) => ImageRecord {
                    path: label.clone(),
                    psnr_db: None,
                    ssim: None,
                    noisy_psnr_db: None,
                    error: Some(e),
                },
            }
        })
        .collect();
    let config = EvalConfig {
        method: models.method().into(),
        models: models.labels(),
        sigma255,
        blur_sigma: models.blur_sigma(),
        seed,
        timestamp: now_unix(),
        color: "grayscale (luma 0.299R + 0.587G + 0.114B)".into(),
        ssim: format!(
            "mean SSIM, {SSIM_WINDOW}x{SSIM_WINDOW} Gaussian window sigma {SSIM_WINDOW_SIGMA}, K1 {SSIM_K1}, K2 {SSIM_K2}, valid windows, [0,1] scale"
        ),
    };
    Ok(EvalReport::from_records(config, records))
}

/// Loads every manifest entry and evaluates. Unreadable images become
/// per-image errors and warnings, not a failed run.
pub fn evaluate_dataset(manifest: &[PathBuf], sigma255: f64, models: &Models, seed: u64) -> Result<EvalReport> {
    let images: Vec<(String, Result<ImageGray>)> = manifest
        .iter()
        .map(|p| (p.display().to_string(), load_image(p)))
        .collect();
    evaluate_images(&images, sigma255, models, seed)
}
