//! Command-line front end. The `fsdn` binary is a thin wrapper over [`run`].

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use crate::checkpoint::save_checkpoint;
use crate::data::{add_awgn, is_image_path, list_images, load_image, read_manifest, save_image, save_raw_plane};
use crate::error::{Error, ErrorClass, Result};
use crate::eval::{evaluate_dataset, LoadedModel, Models};
use crate::frequency::{decompose, DEFAULT_BLUR_SIGMA};
use crate::selftest::run_selftest;
use crate::training::{
    parse_kv, train_dual_from_manifest, train_network, write_epoch_csv, Execution, NetworkKind, TrainConfig,
    TrainOutcome, DEFAULT_SEED,
};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "fsdn", version, about = "Frequency-split dual-CNN image denoiser")]
pub struct Cli {
    /// More logging (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split images into low and high frequency planes.
    Decompose(DecomposeArgs),
    /// Add seeded Gaussian noise to an image.
    AddNoise(AddNoiseArgs),
    /// Train one network, or both frequency networks.
    Train(TrainArgs),
    /// Denoise one image with trained checkpoints.
    Denoise(DenoiseArgs),
    /// Add noise to a test set, denoise it and report PSNR/SSIM.
    Evaluate(EvaluateArgs),
    /// Run the gradient and identity self-checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Image file or directory of images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BLUR_SIGMA)]
    pub blur_sigma: f64,
}

#[derive(Debug, Args)]
pub struct AddNoiseArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Noise standard deviation on the 0-255 scale.
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// 8-bit output image (clamped).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the unclipped noisy plane in raw float format.
    #[arg(long)]
    pub raw_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Component {
    Low,
    High,
    Single,
    Dual,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub component: Component,
    /// Text file listing training images, one per line.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for checkpoints, epoch logs and resolved configs.
    #[arg(long)]
    pub out: PathBuf,
    /// key = value config file (repeatable). A file with a `network` key
    /// only applies to that network.
    #[arg(long = "config")]
    pub configs: Vec<PathBuf>,
    /// Override any config key, e.g. `--set epochs=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub blur_sigma: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patches: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable gradient clipping.
    #[arg(long)]
    pub no_clip: bool,
    /// Train the two dual networks one after the other.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("models").required(true).multiple(true).args(["single", "low", "high"]))]
pub struct ModelArgs {
    /// Low-frequency checkpoint (with --high).
    #[arg(long, requires = "high", conflicts_with = "single")]
    pub low: Option<PathBuf>,
    /// High-frequency checkpoint (with --low).
    #[arg(long, requires = "low", conflicts_with = "single")]
    pub high: Option<PathBuf>,
    /// Single-network checkpoint.
    #[arg(long)]
    pub single: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// JSON report path.
    #[arg(long)]
    pub report: PathBuf,
    /// Plain-text table path; printed to stdout either way.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

/// Failure of a CLI run with the exit code to report.
#[derive(Debug)]
pub struct CliFailure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for CliFailure {
    fn from(e: Error) -> Self {
        let code = match e.class() {
            ErrorClass::Usage => EXIT_USAGE,
            ErrorClass::Io => EXIT_IO,
            ErrorClass::Numeric => EXIT_NUMERIC,
        };
        CliFailure {
            code,
            message: e.to_string(),
        }
    }
}

pub fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        "warn"
    } else {
        match cli.verbose {
            0 => "info",
            1 => "debug",
            _ => "trace",
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_secs()
        .try_init();
}

/// Parses the process arguments, runs the command and maps errors to exit codes.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> ExitCode {
    crate::tensor::retain_large_allocations();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(&cli);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

pub fn run(cli: &Cli) -> std::result::Result<(), CliFailure> {
    match &cli.command {
        Command::Decompose(a) => cmd_decompose(a)?,
        Command::AddNoise(a) => cmd_add_noise(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Denoise(a) => cmd_denoise(a)?,
        Command::Evaluate(a) => cmd_evaluate(a)?,
        Command::Selftest => return cmd_selftest(),
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

pub fn cmd_decompose(a: &DecomposeArgs) -> Result<()> {
    info!("decompose: input={} out={} blur_sigma={}", a.input.display(), a.out.display(), a.blur_sigma);
    let inputs = if a.input.is_dir() {
        list_images(&a.input)?
    } else if is_image_path(&a.input) {
        vec![a.input.clone()]
    } else {
        return Err(Error::config(format!("{} is not an image or directory", a.input.display())));
    };
    if inputs.is_empty() {
        return Err(Error::config(format!("no images found in {}", a.input.display())));
    }
    create_dir(&a.out)?;
    for path in &inputs {
        let img = load_image(path)?;
        let pair = decompose(&img, a.blur_sigma)?;
        let s = stem(path);
        save_raw_plane(&pair.low, a.out.join(format!("{s}_low.fspl")))?;
        save_raw_plane(&pair.high, a.out.join(format!("{s}_high.fspl")))?;
        save_image(&pair.low, a.out.join(format!("{s}_low.png")))?;
        info!("{} -> {s}_low.fspl, {s}_high.fspl, {s}_low.png", path.display());
    }
    Ok(())
}

pub fn cmd_add_noise(a: &AddNoiseArgs) -> Result<()> {
    info!("add-noise: input={} sigma={} seed={} out={}", a.input.display(), a.sigma, a.seed, a.out.display());
    let img = load_image(&a.input)?;
    let sample = add_awgn(&img, a.sigma, a.seed)?;
    save_image(&sample.noisy, &a.out)?;
    if let Some(raw) = &a.raw_out {
        save_raw_plane(&sample.noisy, raw)?;
    }
    Ok(())
}

/// Resolves the config for one network: defaults, then files, then `--set`, then flags.
pub fn resolve_train_config(kind: NetworkKind, a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::defaults(kind);
    for path in &a.configs {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let pairs = parse_kv(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        if let Some((_, net)) = pairs.iter().find(|(k, _)| k == "network") {
            if net.parse::<NetworkKind>()? != kind {
                continue;
            }
        }
        cfg.apply_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    }
    for s in &a.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(v) = a.sigma {
        cfg.sigma255 = v;
    }
    if let Some(v) = a.blur_sigma {
        cfg.blur_sigma = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.patches {
        cfg.patches_per_network = v;
    }
    if let Some(v) = a.depth {
        cfg.depth_override = Some(v);
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if a.no_clip {
        cfg.grad_clip_norm = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_outcome(out: &Path, outcome: &TrainOutcome) -> Result<()> {
    let name = outcome.config.network.as_str();
    let ckpt = out.join(format!("{name}.fsdn"));
    save_checkpoint(&outcome.checkpoint, &ckpt)?;
    write_epoch_csv(&outcome.epochs, out.join(format!("{name}_epochs.csv")))?;
    let cfg_path = out.join(format!("{name}_config.txt"));
    std::fs::write(&cfg_path, outcome.config.to_kv_text()).map_err(|e| Error::io(&cfg_path, e))?;
    info!("wrote {}", ckpt.display());
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let manifest = read_manifest(&a.manifest)?;
    create_dir(&a.out)?;
    let kinds: Vec<NetworkKind> = match a.component {
        Component::Low => vec![NetworkKind::LowFreq],
        Component::High => vec![NetworkKind::HighFreq],
        Component::Single => vec![NetworkKind::BaselineSingle],
        Component::Dual => vec![NetworkKind::LowFreq, NetworkKind::HighFreq],
    };
    let configs = kinds
        .iter()
        .map(|&k| resolve_train_config(k, a))
        .collect::<Result<Vec<_>>>()?;
    for c in &configs {
        info!(
            "resolved config for {} ({} images from {}):\n{}",
            c.network,
            manifest.len(),
            a.manifest.display(),
            c.to_kv_text().trim_end()
        );
    }
    if a.component == Component::Dual {
        let exec = if a.sequential { Execution::Sequential } else { Execution::Concurrent };
        let (low, high) = train_dual_from_manifest(&configs[0], &configs[1], &manifest, exec)?;
        write_outcome(&a.out, &low)?;
        write_outcome(&a.out, &high)?;
    } else {
        let outcome = train_network(&configs[0], &manifest)?;
        write_outcome(&a.out, &outcome)?;
    }
    Ok(())
}

fn load_models(m: &ModelArgs) -> Result<Models> {
    match (&m.single, &m.low, &m.high) {
        (Some(s), None, None) => Ok(Models::Single(LoadedModel::load(s)?)),
        (None, Some(l), Some(h)) => Ok(Models::Dual {
            low: LoadedModel::load(l)?,
            high: LoadedModel::load(h)?,
        }),
        _ => Err(Error::config("give either --single or both --low and --high")),
    }
}

pub fn cmd_denoise(a: &DenoiseArgs) -> Result<()> {
    info!(
        "denoise: input={} out={} models=[single={:?} low={:?} high={:?}]",
        a.input.display(),
        a.out.display(),
        a.models.single,
        a.models.low,
        a.models.high
    );
    let models = load_models(&a.models)?;
    if let Models::Dual { low, high } = &models {
        if low.meta.map(|m| m.blur_sigma) != high.meta.map(|m| m.blur_sigma) {
            warn!("low and high checkpoints were trained with different blur sigmas");
        }
    }
    let out = models.denoise(&load_image(&a.input)?)?;
    save_image(&out, &a.out)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let manifest = read_manifest(&a.manifest)?;
    let models = load_models(&a.models)?;
    info!(
        "evaluate: manifest={} ({} images) sigma={} seed={} method={} report={}",
        a.manifest.display(),
        manifest.len(),
        a.sigma,
        a.seed,
        models.method(),
        a.report.display()
    );
    let report = evaluate_dataset(&manifest, a.sigma, &models, a.seed)?;
    for w in &report.warnings {
        warn!("{w}");
    }
    report.save_json(&a.report)?;
    let table = report.to_table();
    if let Some(t) = &a.table {
        std::fs::write(t, &table).map_err(|e| Error::io(t, e))?;
    }
    print!("{table}");
    if report.evaluated() == 0 {
        return Err(Error::Image {
            path: a.manifest.clone(),
            detail: "no image could be evaluated".into(),
        });
    }
    Ok(())
}

pub fn cmd_selftest() -> std::result::Result<(), CliFailure> {
    let report = run_selftest();
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliFailure {
            code: EXIT_FAILURE,
            message: "self-test failed".into(),
        })
    }
}
