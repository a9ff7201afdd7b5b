//! Command-line surface.
//!
//! Pipeline settings resolve as: built-in defaults, then `PYRADOC_SEED`, then
//! the `--config` file, then explicit flags.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pyradoc::{PipelineConfig, ResizePolicy};

pub const SEED_ENV: &str = "PYRADOC_SEED";

#[derive(Debug, Parser)]
#[command(name = "pyradoc", version, about = "Memory-bounded document inpainting with patch pyramid diffusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Restore the missing regions of a document image.
    Inpaint(InpaintArgs),
    /// Write the fused text-structure map of a document.
    PredictStructure(StructureArgs),
    /// Generate a free-form corruption mask.
    GenMask(GenMaskArgs),
    /// Score predictions against ground truth (PSNR, SSIM).
    Evaluate(EvaluateArgs),
    /// Print the resolved configuration and summarize weight archives.
    Info(InfoArgs),
}

/// Pipeline settings; names follow the usual symbols of the method.
#[derive(Debug, Default, Args)]
pub struct PipelineArgs {
    /// key=value configuration file, applied under explicit flags.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Up-sampling factor of the structure pyramid.
    #[arg(long = "m")]
    pub m: Option<usize>,
    /// Number of pyramid scales, or "auto".
    #[arg(long = "S")]
    pub s: Option<String>,
    /// Base pyramid height.
    #[arg(long = "u")]
    pub u: Option<usize>,
    /// Base pyramid width.
    #[arg(long = "v")]
    pub v: Option<usize>,
    /// Structure patch height.
    #[arg(long = "h")]
    pub h: Option<usize>,
    /// Structure patch width.
    #[arg(long = "w")]
    pub w: Option<usize>,
    /// Structure patch vertical stride.
    #[arg(long = "dh")]
    pub dh: Option<usize>,
    /// Structure patch horizontal stride.
    #[arg(long = "dw")]
    pub dw: Option<usize>,
    /// Largest allowed working side.
    #[arg(long)]
    pub max_side: Option<usize>,
    /// Structure patches per batch.
    #[arg(long)]
    pub structure_batch: Option<usize>,
    /// Number of denoising patch scales.
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Base denoising patch height.
    #[arg(long = "a")]
    pub a: Option<usize>,
    /// Base denoising patch width.
    #[arg(long = "b")]
    pub b: Option<usize>,
    /// Base denoising vertical stride.
    #[arg(long = "da")]
    pub da: Option<usize>,
    /// Base denoising horizontal stride.
    #[arg(long = "db")]
    pub db: Option<usize>,
    /// Number of inference steps.
    #[arg(long = "T")]
    pub t: Option<usize>,
    /// Seed of the initial noise [env: PYRADOC_SEED].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Denoising patches per batch, per scale (comma separated).
    #[arg(long)]
    pub batch: Option<String>,
}

impl PipelineArgs {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.set("seed", &seed).with_context(|| format!("{SEED_ENV}={seed:?}"))?;
        }
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            for (key, value) in pyradoc::config::parse_key_values(&text)? {
                if !cfg.set(&key, &value)? {
                    bail!("{}: unknown configuration key {key:?}", path.display());
                }
            }
        }
        let flags = [
            ("m", self.m.map(|v| v.to_string())),
            ("S", self.s.clone()),
            ("u", self.u.map(|v| v.to_string())),
            ("v", self.v.map(|v| v.to_string())),
            ("h", self.h.map(|v| v.to_string())),
            ("w", self.w.map(|v| v.to_string())),
            ("dh", self.dh.map(|v| v.to_string())),
            ("dw", self.dw.map(|v| v.to_string())),
            ("max_side", self.max_side.map(|v| v.to_string())),
            ("structure_batch", self.structure_batch.map(|v| v.to_string())),
            ("K", self.k.map(|v| v.to_string())),
            ("a", self.a.map(|v| v.to_string())),
            ("b", self.b.map(|v| v.to_string())),
            ("da", self.da.map(|v| v.to_string())),
            ("db", self.db.map(|v| v.to_string())),
            ("T", self.t.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("batch", self.batch.clone()),
        ];
        for (key, value) in flags {
            if let Some(value) = value {
                cfg.set(key, &value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct RuntimeArgs {
    /// Worker threads for patch batches.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// What to do when a backend rejects the native patch size.
    #[arg(long, value_enum, default_value_t = PolicyArg::Resize)]
    pub resize_policy: PolicyArg,
    /// Directory for intermediate structure maps and per-step images.
    #[arg(long, value_name = "DIR")]
    pub debug_dir: Option<PathBuf>,
    /// Report progress on stderr.
    #[arg(long)]
    pub progress: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PolicyArg {
    Resize,
    Reject,
}

impl From<PolicyArg> for ResizePolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Resize => ResizePolicy::Resize,
            PolicyArg::Reject => ResizePolicy::Reject,
        }
    }
}

#[derive(Debug, Args)]
pub struct PredictorArgs {
    /// Structure predictor: luminance, constant:<v> or tiny-net.
    #[arg(long, default_value = "luminance")]
    pub predictor: String,
    /// Weight archive for the tiny-net predictor.
    #[arg(long, value_name = "FILE")]
    pub predictor_weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InpaintArgs {
    /// Corrupted document (PNG).
    #[arg(long)]
    pub input: PathBuf,
    /// Restored document; defaults to <input>.inpainted.png.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Mask PNG (white = missing) blanked out of the input first.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Ground truth; when given, PSNR and SSIM of the result are reported.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Where to write the metric summary (stdout otherwise).
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Denoiser: tiny-net or identity.
    #[arg(long, default_value = "tiny-net")]
    pub denoiser: String,
    /// Weight archive for the tiny-net denoiser.
    #[arg(long, value_name = "FILE")]
    pub denoiser_weights: Option<PathBuf>,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub runtime: RuntimeArgs,
}

#[derive(Debug, Args)]
pub struct StructureArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub runtime: RuntimeArgs,
}

#[derive(Debug, Args)]
pub struct GenMaskArgs {
    /// patch, document or empty.
    #[arg(long, default_value = "document")]
    pub preset: String,
    /// Stroke seed [env: PYRADOC_SEED, default 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Square side; overridden per axis by --height / --width.
    #[arg(long, default_value_t = 1024)]
    pub size: usize,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub parts: Option<usize>,
    #[arg(long)]
    pub max_vertices: Option<usize>,
    #[arg(long)]
    pub max_length: Option<usize>,
    #[arg(long)]
    pub max_brush_width: Option<usize>,
    /// Largest turn between stroke segments, in degrees.
    #[arg(long)]
    pub max_angle: Option<f64>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted image, or a directory of PNGs.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth image, or a directory with the same file names.
    #[arg(long)]
    pub gt: PathBuf,
    /// Where to write the summary (stdout otherwise).
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    /// Weight archives to summarize.
    #[arg(long = "weights", value_name = "FILE")]
    pub weights: Vec<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

pub fn seed_fallback(flag: Option<u64>) -> Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| pyradoc::Error::InvalidArgument(format!("{SEED_ENV}={v:?} is not a seed")).into()),
        Err(_) => Ok(0),
    }
}
