//! Optimizer, learning-rate schedule and the training loops for the two
//! frequency networks and the residual baseline.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::{Checkpoint, TrainingMeta};
use crate::data::{add_awgn, cut_patches, derive_seed, load_image, sample_patch_coords, streams, PatchSource, TargetPlane};
use crate::error::{Error, Result};
use crate::frequency::{decompose, DEFAULT_BLUR_SIGMA};
use crate::layers::{mse_loss, Mode};
use crate::network::{Gradients, MappingMode, Network, NetworkSpec};
use crate::plane::{ImageGray, Plane};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetworkKind {
    LowFreq,
    HighFreq,
    BaselineSingle,
}

impl NetworkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NetworkKind::LowFreq => "low",
            NetworkKind::HighFreq => "high",
            NetworkKind::BaselineSingle => "single",
        }
    }

    fn stream_index(self) -> u64 {
        match self {
            NetworkKind::LowFreq => 0,
            NetworkKind::HighFreq => 1,
            NetworkKind::BaselineSingle => 2,
        }
    }

    pub fn canonical_spec(self) -> NetworkSpec {
        match self {
            NetworkKind::LowFreq => NetworkSpec::low_freq(),
            NetworkKind::HighFreq => NetworkSpec::high_freq(),
            NetworkKind::BaselineSingle => NetworkSpec::baseline_dncnn_s(),
        }
    }
}

impl std::fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for NetworkKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "low" | "lowfreq" => Ok(NetworkKind::LowFreq),
            "high" | "highfreq" => Ok(NetworkKind::HighFreq),
            "single" | "baseline" | "baselinesingle" => Ok(NetworkKind::BaselineSingle),
            other => Err(Error::config(format!("unknown network {other:?} (low|high|single)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    /// Geometric interpolation between the endpoints.
    Log,
    Linear,
}

impl std::str::FromStr for LrSchedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "log" => Ok(LrSchedule::Log),
            "linear" => Ok(LrSchedule::Linear),
            other => Err(Error::config(format!("unknown lr schedule {other:?} (log|linear)"))),
        }
    }
}

impl std::fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LrSchedule::Log => "log",
            LrSchedule::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub network: NetworkKind,
    pub sigma255: f64,
    pub blur_sigma: f64,
    pub patch_size: usize,
    pub minibatch: usize,
    pub patches_per_network: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
    /// Conv-layer count replacing the canonical depth.
    pub depth_override: Option<usize>,
    pub mapping_mode: MappingMode,
}

pub const DEFAULT_SEED: u64 = 20_200_517;

/// Keys accepted in a training config file, in the order they are written.
pub const CONFIG_KEYS: &[&str] = &[
    "network",
    "sigma255",
    "blur_sigma",
    "patch_size",
    "minibatch",
    "patches_per_network",
    "epochs",
    "lr_start",
    "lr_end",
    "lr_schedule",
    "momentum",
    "weight_decay",
    "grad_clip_norm",
    "seed",
    "depth_override",
    "mapping_mode",
];

impl TrainConfig {
    /// Defaults for one network: patch 50/70/40, minibatch 128/64/128,
    /// 90,000 patches, 15 epochs, lr 0.1 → 0.0001.
    pub fn defaults(network: NetworkKind) -> Self {
        let (patch_size, minibatch, mapping_mode) = match network {
            NetworkKind::LowFreq => (50, 128, MappingMode::Direct),
            NetworkKind::HighFreq => (70, 64, MappingMode::Direct),
            NetworkKind::BaselineSingle => (40, 128, MappingMode::Residual),
        };
        TrainConfig {
            network,
            sigma255: 25.0,
            blur_sigma: DEFAULT_BLUR_SIGMA,
            patch_size,
            minibatch,
            patches_per_network: 90_000,
            epochs: 15,
            lr_start: 0.1,
            lr_end: 1e-4,
            lr_schedule: LrSchedule::Log,
            momentum: 0.9,
            weight_decay: 1e-4,
            grad_clip_norm: Some(5.0),
            seed: DEFAULT_SEED,
            depth_override: None,
            mapping_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end) {
            return fail(format!("need lr_start >= lr_end > 0, got {} and {}", self.lr_start, self.lr_end));
        }
        if self.minibatch == 0 {
            return fail("minibatch must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.patch_size == 0 {
            return fail("patch_size must be positive".into());
        }
        if self.patches_per_network == 0 {
            return fail("patches_per_network must be positive".into());
        }
        if !(self.sigma255 >= 0.0 && self.blur_sigma > 0.0) {
            return fail(format!("invalid sigma255 {} / blur_sigma {}", self.sigma255, self.blur_sigma));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return fail(format!("invalid momentum {} / weight_decay {}", self.momentum, self.weight_decay));
        }
        if let Some(c) = self.grad_clip_norm {
            if c <= 0.0 {
                return fail(format!("grad_clip_norm must be positive, got {c}"));
            }
        }
        if self.depth_override == Some(0) {
            return fail("depth_override must be at least 1".into());
        }
        if self.network != NetworkKind::BaselineSingle && self.mapping_mode == MappingMode::Residual {
            return fail(format!("the {} network is a direct component mapping", self.network));
        }
        Ok(())
    }

    /// Architecture to instantiate, with `depth_override` and `mapping_mode` applied.
    pub fn spec(&self) -> Result<NetworkSpec> {
        let canonical = self.network.canonical_spec();
        let spec = match self.depth_override {
            Some(d) => canonical.with_depth(d)?,
            None => canonical,
        };
        Ok(spec.with_mapping(self.mapping_mode))
    }

    /// What the network learns to output.
    pub fn target_plane(&self) -> TargetPlane {
        match (self.network, self.mapping_mode) {
            (NetworkKind::LowFreq, _) => TargetPlane::Low,
            (NetworkKind::HighFreq, _) => TargetPlane::High,
            (NetworkKind::BaselineSingle, MappingMode::Residual) => TargetPlane::Noise,
            (NetworkKind::BaselineSingle, MappingMode::Direct) => TargetPlane::Clean,
        }
    }

    /// Applies one `key = value` setting. Unknown keys are rejected.
    /// `network` is not settable here: it selects the defaults.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::config(format!("invalid value {v:?} for {key}")))
        }
        let off = |v: &str| matches!(v.to_ascii_lowercase().as_str(), "none" | "off" | "0");
        match key {
            "network" => {
                let kind: NetworkKind = value.parse()?;
                if kind != self.network {
                    return Err(Error::config(format!(
                        "config is for network {kind} but {} was requested",
                        self.network
                    )));
                }
            }
            "sigma255" => self.sigma255 = num(key, value)?,
            "blur_sigma" => self.blur_sigma = num(key, value)?,
            "patch_size" => self.patch_size = num(key, value)?,
            "minibatch" => self.minibatch = num(key, value)?,
            "patches_per_network" => self.patches_per_network = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr_start" => self.lr_start = num(key, value)?,
            "lr_end" => self.lr_end = num(key, value)?,
            "lr_schedule" => self.lr_schedule = value.parse()?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "grad_clip_norm" => self.grad_clip_norm = if off(value) { None } else { Some(num(key, value)?) },
            "seed" => self.seed = num(key, value)?,
            "depth_override" => self.depth_override = if off(value) { None } else { Some(num(key, value)?) },
            "mapping_mode" => self.mapping_mode = value.parse()?,
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply_pairs<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Renders the config in the flat `key = value` file format.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(s, "{key} = {}", self.value_of(key));
        }
        s
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "network" => self.network.to_string(),
            "sigma255" => self.sigma255.to_string(),
            "blur_sigma" => self.blur_sigma.to_string(),
            "patch_size" => self.patch_size.to_string(),
            "minibatch" => self.minibatch.to_string(),
            "patches_per_network" => self.patches_per_network.to_string(),
            "epochs" => self.epochs.to_string(),
            "lr_start" => self.lr_start.to_string(),
            "lr_end" => self.lr_end.to_string(),
            "lr_schedule" => self.lr_schedule.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "grad_clip_norm" => self.grad_clip_norm.map_or("none".into(), |c| c.to_string()),
            "seed" => self.seed.to_string(),
            "depth_override" => self.depth_override.map_or("none".into(), |d| d.to_string()),
            "mapping_mode" => self.mapping_mode.to_string(),
            _ => unreachable!("all CONFIG_KEYS are handled"),
        }
    }
}

/// Parses flat `key = value` text: one pair per line, `#` comments, blank
/// lines ignored. Duplicate keys are an error.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key = value, got {raw:?}", lineno + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::config(format!("line {}: empty key", lineno + 1)));
        }
        if out.iter().any(|(e, _)| e == k) {
            return Err(Error::config(format!("line {}: duplicate key {k:?}", lineno + 1)));
        }
        out.push((k.to_owned(), v.to_owned()));
    }
    Ok(out)
}

/// Learning rate for a 1-based epoch.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> Result<f64> {
    if epoch == 0 || epoch > config.epochs {
        return Err(Error::config(format!("epoch {epoch} outside 1..={}", config.epochs)));
    }
    if config.epochs == 1 {
        return Ok(config.lr_start);
    }
    let t = (epoch - 1) as f64 / (config.epochs - 1) as f64;
    Ok(match config.lr_schedule {
        LrSchedule::Log => {
            let (a, b) = (config.lr_start.log10(), config.lr_end.log10());
            10f64.powf(a + t * (b - a))
        }
        LrSchedule::Linear => config.lr_start + t * (config.lr_end - config.lr_start),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdParams {
    pub momentum: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: Option<f64>,
}

impl From<&TrainConfig> for SgdParams {
    fn from(c: &TrainConfig) -> Self {
        SgdParams {
            momentum: c.momentum,
            weight_decay: c.weight_decay,
            grad_clip_norm: c.grad_clip_norm,
        }
    }
}

/// Scale that brings a gradient of norm `norm` within `clip`.
pub fn clip_scale(norm: f64, clip: Option<f64>) -> f64 {
    match clip {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    }
}

/// One momentum step on a single tensor:
/// `v ← μ·v − lr·(s·g + λ·w)`, `w ← w + v`.
pub fn sgd_update<T: Real>(
    params: &mut [T],
    grads: &[T],
    velocity: &mut [T],
    lr: f64,
    momentum: f64,
    decay: f64,
    grad_scale: f64,
) {
    for ((w, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let wf = w.as_f64();
        let vf = momentum * v.as_f64() - lr * (grad_scale * g.as_f64() + decay * wf);
        *v = T::from_f64(vf);
        *w = T::from_f64(wf + vf);
    }
}

/// SGD with momentum, conv-weight decay and global-norm clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd<T: Real> {
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(net: &mut Network<T>) -> Self {
        Sgd {
            velocity: net.params_mut().iter().map(|p| vec![T::zero(); p.values.len()]).collect(),
        }
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    /// Applies one step and returns the pre-clip gradient norm.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>, lr: f64, params: SgdParams) -> Result<f64> {
        let mut slots = net.params_mut();
        if slots.len() != grads.tensors.len() || slots.len() != self.velocity.len() {
            return Err(Error::shape(
                "Sgd::step",
                format!("{} parameters, {} gradients", slots.len(), grads.tensors.len()),
            ));
        }
        for (i, (s, g)) in slots.iter().zip(&grads.tensors).enumerate() {
            if s.values.len() != g.len() {
                return Err(Error::shape(
                    "Sgd::step",
                    format!("parameter {i} has {} values, gradient {}", s.values.len(), g.len()),
                ));
            }
        }
        let norm = grads.l2_norm();
        let scale = clip_scale(norm, params.grad_clip_norm);
        for ((slot, g), v) in slots.iter_mut().zip(&grads.tensors).zip(&mut self.velocity) {
            let decay = if slot.kind.decays() { params.weight_decay } else { 0.0 };
            sgd_update(slot.values, g, v, lr, params.momentum, decay, scale);
        }
        Ok(norm)
    }
}

/// Clean images of a training set with their noisy versions and components.
///
/// Noise for image `i` is seeded from `(seed, i)` so both frequency networks
/// see the same noisy images when they share a seed.
#[derive(Debug, Clone)]
pub struct TrainingImages {
    pub labels: Vec<String>,
    pub clean: Vec<ImageGray>,
    pub noisy: Vec<Plane<f32>>,
    pub low: Vec<Plane<f32>>,
    pub high: Vec<Plane<f32>>,
    pub sigma255: f64,
    pub blur_sigma: f64,
    pub seed: u64,
}

impl TrainingImages {
    pub fn from_images(labels: Vec<String>, clean: Vec<ImageGray>, sigma255: f64, blur_sigma: f64, seed: u64) -> Result<Self> {
        if clean.is_empty() {
            return Err(Error::config("training set is empty"));
        }
        let prepared: Vec<(Plane<f32>, Plane<f32>, Plane<f32>)> = clean
            .par_iter()
            .enumerate()
            .map(|(i, img)| {
                let noisy = add_awgn(img, sigma255, derive_seed(seed, streams::NOISE, i as u64))?.noisy;
                let pair = decompose(img, blur_sigma)?;
                Ok((noisy, pair.low, pair.high))
            })
            .collect::<Result<_>>()?;
        let mut noisy = Vec::with_capacity(clean.len());
        let mut low = Vec::with_capacity(clean.len());
        let mut high = Vec::with_capacity(clean.len());
        for (n, l, h) in prepared {
            noisy.push(n);
            low.push(l);
            high.push(h);
        }
        Ok(TrainingImages {
            labels,
            clean,
            noisy,
            low,
            high,
            sigma255,
            blur_sigma,
            seed,
        })
    }

    pub fn load(paths: &[PathBuf], sigma255: f64, blur_sigma: f64, seed: u64) -> Result<Self> {
        let clean = paths.iter().map(load_image).collect::<Result<Vec<_>>>()?;
        let labels = paths.iter().map(|p| p.display().to_string()).collect();
        Self::from_images(labels, clean, sigma255, blur_sigma, seed)
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    fn target(&self, plane: TargetPlane) -> Vec<Plane<f32>> {
        match plane {
            TargetPlane::Low => self.low.clone(),
            TargetPlane::High => self.high.clone(),
            TargetPlane::Clean => self.clean.clone(),
            TargetPlane::Noise => self
                .noisy
                .iter()
                .zip(&self.clean)
                .map(|(n, c)| n.zip_with(c, "noise", |a, b| a - b).expect("same dims"))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub config: TrainConfig,
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochLog>,
}

impl TrainOutcome {
    /// `epoch,lr,mean_loss` CSV with a header row.
    pub fn epoch_csv(&self) -> String {
        epoch_csv(&self.epochs)
    }
}

pub fn epoch_csv(epochs: &[EpochLog]) -> String {
    let mut s = String::from("epoch,lr,mean_loss\n");
    for e in epochs {
        let _ = writeln!(s, "{},{:e},{:e}", e.epoch, e.lr, e.mean_loss);
    }
    s
}

pub fn write_epoch_csv(epochs: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, epoch_csv(epochs)).map_err(|e| Error::io(path, e))
}

/// Trains one network on an already prepared image set.
pub fn train_on(config: &TrainConfig, images: &TrainingImages) -> Result<TrainOutcome> {
    config.validate()?;
    if images.sigma255 != config.sigma255 || images.blur_sigma != config.blur_sigma || images.seed != config.seed {
        return Err(Error::config(format!(
            "training images prepared for sigma255 {} / blur {} / seed {} but config has {} / {} / {}",
            images.sigma255, images.blur_sigma, images.seed, config.sigma255, config.blur_sigma, config.seed
        )));
    }
    let spec = config.spec()?;
    let kind = config.network;
    let targets = images.target(config.target_plane());
    let sources: Vec<PatchSource<'_>> = images
        .labels
        .iter()
        .zip(&images.noisy)
        .zip(&targets)
        .map(|((label, noisy), target)| PatchSource { label, noisy, target })
        .collect();

    let patch_seed = derive_seed(config.seed, streams::PATCHES, kind.stream_index());
    let coords = sample_patch_coords(&sources, config.patch_size, config.patches_per_network, patch_seed)?;

    let mut net = Network::<f32>::build(&spec, derive_seed(config.seed, streams::INIT, kind.stream_index()))?;
    net.set_mode(Mode::Train);
    let mut opt = Sgd::new(&mut net);
    let sgd = SgdParams::from(config);
    info!(
        "training {} ({} convs, {} params, rf {}) on {} patches of {}px, {} epochs",
        spec.name,
        spec.conv_count(),
        net.parameter_count(),
        net.receptive_field(),
        coords.len(),
        config.patch_size,
        config.epochs
    );

    let mut order: Vec<usize> = (0..coords.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut batch_coords = Vec::with_capacity(config.minibatch);
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let lr = lr_schedule(epoch, config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed ^ kind.stream_index(), streams::SHUFFLE, epoch as u64));
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (bi, chunk) in order.chunks(config.minibatch).enumerate() {
            batch_coords.clear();
            batch_coords.extend(chunk.iter().map(|&i| coords[i]));
            let batch = cut_patches(&sources, &batch_coords, config.patch_size);
            let (pred, trace) = net.forward_train(&batch.inputs)?;
            let (loss, grad) = mse_loss(&pred, &batch.targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            let grads = net.backward(&trace, &grad)?;
            let norm = opt.step(&mut net, &grads, lr, sgd)?;
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            debug!("{} epoch {epoch} batch {bi}: loss {loss:.6e} grad norm {norm:.3e}", spec.name);
            weighted += loss * chunk.len() as f64;
        }
        let mean_loss = weighted / coords.len() as f64;
        info!(
            "{} epoch {epoch}/{}: lr {lr:.4e} mean loss {mean_loss:.6e} ({:.1}s)",
            spec.name,
            config.epochs,
            started.elapsed().as_secs_f64()
        );
        epochs.push(EpochLog { epoch, lr, mean_loss });
    }
    net.set_mode(Mode::Inference);
    Ok(TrainOutcome {
        config: config.clone(),
        checkpoint: Checkpoint {
            network: net,
            meta: TrainingMeta {
                epoch: config.epochs as u32,
                sigma255: config.sigma255 as f32,
                blur_sigma: config.blur_sigma as f32,
                seed: config.seed,
            },
        },
        epochs,
    })
}

/// Loads the manifest images and trains one network.
pub fn train_network(config: &TrainConfig, manifest: &[PathBuf]) -> Result<TrainOutcome> {
    config.validate()?;
    let images = TrainingImages::load(manifest, config.sigma255, config.blur_sigma, config.seed)?;
    train_on(config, &images)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Concurrent,
}

/// Trains the low and high frequency networks. The two runs share only
/// read-only image data, so both execution modes give identical results.
pub fn train_dual(
    config_low: &TrainConfig,
    config_high: &TrainConfig,
    images: &TrainingImages,
    execution: Execution,
) -> Result<(TrainOutcome, TrainOutcome)> {
    if config_low.network != NetworkKind::LowFreq || config_high.network != NetworkKind::HighFreq {
        return Err(Error::config(format!(
            "dual training needs a low and a high config, got {} and {}",
            config_low.network, config_high.network
        )));
    }
    if config_low.sigma255 != config_high.sigma255 || config_low.blur_sigma != config_high.blur_sigma {
        return Err(Error::config(format!(
            "dual configs disagree: sigma255 {} vs {}, blur_sigma {} vs {}",
            config_low.sigma255, config_high.sigma255, config_low.blur_sigma, config_high.blur_sigma
        )));
    }
    match execution {
        Execution::Sequential => Ok((train_on(config_low, images)?, train_on(config_high, images)?)),
        Execution::Concurrent => std::thread::scope(|s| {
            let low = s.spawn(|| train_on(config_low, images));
            let high = s.spawn(|| train_on(config_high, images));
            let low = low.join().map_err(|_| Error::Numeric("low-frequency training thread panicked".into()))?;
            let high = high.join().map_err(|_| Error::Numeric("high-frequency training thread panicked".into()))?;
            Ok((low?, high?))
        }),
    }
}

/// Dual training straight from a manifest. Images load once per distinct
/// seed so configs with different seeds still get their own noise draws.
pub fn train_dual_from_manifest(
    config_low: &TrainConfig,
    config_high: &TrainConfig,
    manifest: &[PathBuf],
    execution: Execution,
) -> Result<(TrainOutcome, TrainOutcome)> {
    config_low.validate()?;
    config_high.validate()?;
    if config_low.seed == config_high.seed {
        let images = TrainingImages::load(manifest, config_low.sigma255, config_low.blur_sigma, config_low.seed)?;
        return train_dual(config_low, config_high, &images, execution);
    }
    let low_images = TrainingImages::load(manifest, config_low.sigma255, config_low.blur_sigma, config_low.seed)?;
    let high_images = TrainingImages::load(manifest, config_high.sigma255, config_high.blur_sigma, config_high.seed)?;
    match execution {
        Execution::Sequential => Ok((train_on(config_low, &low_images)?, train_on(config_high, &high_images)?)),
        Execution::Concurrent => std::thread::scope(|s| {
            let low = s.spawn(|| train_on(config_low, &low_images));
            let high = s.spawn(|| train_on(config_high, &high_images));
            let low = low.join().map_err(|_| Error::Numeric("low-frequency training thread panicked".into()))?;
            let high = high.join().map_err(|_| Error::Numeric("high-frequency training thread panicked".into()))?;
            Ok((low?, high?))
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let c = TrainConfig::defaults(NetworkKind::LowFreq);
        assert!((lr_schedule(1, &c).unwrap() - 0.1).abs() < 1e-15);
        assert!((lr_schedule(15, &c).unwrap() - 1e-4).abs() < 1e-15);
        assert!((lr_schedule(8, &c).unwrap() - 10f64.powf(-2.5)).abs() < 1e-15);
        assert!((lr_schedule(8, &c).unwrap() - 3.1623e-3).abs() < 1e-7);
        assert!(lr_schedule(0, &c).is_err());
        assert!(lr_schedule(16, &c).is_err());
    }

    #[test]
    fn constant_schedule_when_endpoints_match() {
        let mut c = TrainConfig::defaults(NetworkKind::HighFreq);
        c.lr_start = 0.01;
        c.lr_end = 0.01;
        for e in 1..=c.epochs {
            assert!((lr_schedule(e, &c).unwrap() - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_schedule() {
        let mut c = TrainConfig::defaults(NetworkKind::HighFreq);
        c.lr_schedule = LrSchedule::Linear;
        c.epochs = 3;
        c.lr_start = 0.3;
        c.lr_end = 0.1;
        assert!((lr_schedule(2, &c).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn sgd_update_by_hand() {
        let (mut w, mut v) = ([1.0f64], [0.0f64]);
        sgd_update(&mut w, &[1.0], &mut v, 0.1, 0.0, 0.0, 1.0);
        assert!((w[0] - 0.9).abs() < 1e-15);

        let (mut w, mut v) = ([0.0f64], [0.0f64]);
        sgd_update(&mut w, &[1.0], &mut v, 0.1, 0.9, 0.0, 1.0);
        assert!((w[0] + 0.1).abs() < 1e-15);
        sgd_update(&mut w, &[1.0], &mut v, 0.1, 0.9, 0.0, 1.0);
        assert!((v[0] + 0.19).abs() < 1e-15);
        assert!((w[0] + 0.29).abs() < 1e-15);

        let (mut w, mut v) = ([0.5f64], [0.0f64]);
        sgd_update(&mut w, &[0.0], &mut v, 0.1, 0.9, 0.0, 1.0);
        assert_eq!(w[0], 0.5);
    }

    #[test]
    fn clipping_scale() {
        assert_eq!(clip_scale(10.0, Some(5.0)), 0.5);
        assert_eq!(clip_scale(4.0, Some(5.0)), 1.0);
        assert_eq!(clip_scale(1e9, None), 1.0);
    }

    #[test]
    fn weight_decay_only_on_conv_weights() {
        let spec = NetworkSpec::low_freq().with_depth(3).unwrap();
        let mut net = Network::<f64>::build(&spec, 5).unwrap();
        let before = net.flat_params();
        let mut opt = Sgd::new(&mut net);
        let zeros = Gradients {
            tensors: net.params_mut().iter().map(|p| vec![0.0; p.values.len()]).collect(),
        };
        let params = SgdParams { momentum: 0.0, weight_decay: 0.5, grad_clip_norm: None };
        opt.step(&mut net, &zeros, 0.1, params).unwrap();
        let after = net.flat_params();
        let mut offset = 0;
        for slot in net.params_mut() {
            let n = slot.values.len();
            let changed = before[offset..offset + n] != after[offset..offset + n];
            let nonzero = before[offset..offset + n].iter().any(|&v| v != 0.0);
            assert_eq!(changed, slot.kind.decays() && nonzero, "{:?}", slot.kind);
            offset += n;
        }
    }

    #[test]
    fn defaults_per_network() {
        let l = TrainConfig::defaults(NetworkKind::LowFreq);
        assert_eq!((l.patch_size, l.minibatch, l.mapping_mode), (50, 128, MappingMode::Direct));
        let h = TrainConfig::defaults(NetworkKind::HighFreq);
        assert_eq!((h.patch_size, h.minibatch, h.mapping_mode), (70, 64, MappingMode::Direct));
        let s = TrainConfig::defaults(NetworkKind::BaselineSingle);
        assert_eq!((s.patch_size, s.minibatch, s.mapping_mode), (40, 128, MappingMode::Residual));
        assert_eq!(s.target_plane(), TargetPlane::Noise);
        assert_eq!(l.patches_per_network, 90_000);
        assert_eq!(l.epochs, 15);
    }

    #[test]
    fn config_text_round_trip_and_unknown_keys() {
        let mut c = TrainConfig::defaults(NetworkKind::HighFreq);
        c.depth_override = Some(5);
        c.grad_clip_norm = None;
        c.sigma255 = 75.0;
        let pairs = parse_kv(&c.to_kv_text()).unwrap();
        let mut back = TrainConfig::defaults(NetworkKind::HighFreq);
        back.apply_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(back, c);

        assert!(back.set("learning_rate", "0.1").is_err());
        assert!(back.set("network", "low").is_err());
        assert!(parse_kv("a = 1\na = 2").is_err());
        assert!(parse_kv("just words").is_err());
        assert_eq!(parse_kv("# c\n\nepochs = 3 # trailing\n").unwrap(), vec![("epochs".into(), "3".into())]);
    }

    #[test]
    fn invalid_configs() {
        let mut c = TrainConfig::defaults(NetworkKind::LowFreq);
        c.lr_end = 0.5;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::defaults(NetworkKind::LowFreq);
        c.minibatch = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::defaults(NetworkKind::LowFreq);
        c.mapping_mode = MappingMode::Residual;
        assert!(c.validate().is_err());
    }

    #[test]
    fn dual_rejects_mismatched_noise() {
        let img = Plane::filled(16, 16, 0.5f32);
        let images = TrainingImages::from_images(vec!["a".into()], vec![img], 25.0, 4.5, DEFAULT_SEED).unwrap();
        let low = TrainConfig::defaults(NetworkKind::LowFreq);
        let mut high = TrainConfig::defaults(NetworkKind::HighFreq);
        high.sigma255 = 50.0;
        assert!(matches!(train_dual(&low, &high, &images, Execution::Sequential), Err(Error::Config(_))));
        assert!(train_dual(&high, &low, &images, Execution::Sequential).is_err());
    }
}
