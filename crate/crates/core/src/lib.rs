//! Memory-bounded document inpainting with patch pyramid diffusion.
//!
//! The pipeline brings a corrupted document to a working resolution, predicts
//! a text-structure map on overlapping patches at several pyramid scales and
//! fuses them, then runs a deterministic reverse diffusion process in which
//! every step denoises overlapping patches at several patch scales and
//! averages the merged results. Only fixed-size patch batches are ever
//! materialized besides the whole-document working images.
//!
//! ```no_run
//! use pyradoc::{inpaint_document, load_image, save_image, ConstantPredictor, IdentityDenoiser};
//! use pyradoc::{CppdConfig, InferenceOptions, PyramidConfig};
//!
//! # fn main() -> pyradoc::Result<()> {
//! let doc = load_image("corrupted.png")?;
//! let out = inpaint_document(
//!     &doc,
//!     &ConstantPredictor::new(0.5)?,
//!     &IdentityDenoiser,
//!     &PyramidConfig::default(),
//!     &CppdConfig::default(),
//!     &InferenceOptions::default(),
//! )?;
//! save_image(&out, "restored.png")?;
//! # Ok(())
//! # }
//! ```

pub mod backends;
pub mod config;
pub mod cppd;
pub mod diffusion;
pub mod error;
pub mod image;
pub mod io;
pub mod mask;
pub mod meter;
pub mod metrics;
pub mod pyramid;
pub mod runtime;
pub mod tiling;

pub use backends::{
    ConstantPredictor, DenoiseInput, Denoiser, GroundTruthDenoiser, IdentityDenoiser, LuminancePredictor,
    StructurePredictor, TinyNetDenoiser, TinyNetPredictor, TinyUNet, TinyUNetSpec, WeightArchive,
};
pub use config::PipelineConfig;
pub use cppd::{inpaint_document, initial_noise, reconstruct_step, Cppd, CppdConfig};
pub use diffusion::{ddim_step, q_sample, NoiseSchedule};
pub use error::{Error, Result, Stage, WeightError};
pub use image::{compose_masked, resize_bicubic, BinaryMask, ImageTensor};
pub use io::{load_image, load_mask, save_image, save_mask};
pub use mask::{combine_or, freeform_mask, MaskParams};
pub use meter::{patch_buffer_cap, BufferMeter};
pub use metrics::{psnr, ssim, MetricReport};
pub use pyramid::{build_image_pyramid, fuse_pyramid, plan_pyramid, predict_structure, pspp, PyramidConfig, PyramidPlan};
pub use runtime::{InferenceOptions, Progress, ResizePolicy};
pub use tiling::{extract_patch, merge, plan_grid, split, PatchGrid, PatchMerger};
