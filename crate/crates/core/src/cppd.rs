//! Conditional patch pyramid denoising and the end-to-end inpainting pipeline.
//!
//! Every reverse step runs the denoiser independently at `K` patch scales.
//! Scale `k` tiles the latent, the corrupted image and the structure map with
//! `k·a × k·b` windows at stride `k·d_a × k·d_b`, predicts the clean patch,
//! applies the deterministic reverse update per patch and merges by overlap
//! averaging. The next latent is the mean of the `K` merged results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::backends::{scale_grids, DenoiseInput, Denoiser, StructurePredictor};
use crate::diffusion::{ddim_update_in_place, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START};
use crate::error::{Error, Result, Stage, StageExt};
use crate::image::{resize_bicubic, ImageTensor};
use crate::pyramid::{plan_pyramid, structure_map, to_working, PyramidConfig};
use crate::runtime::{backend_dims, patch_pass, to_dims, InferenceOptions, Progress};
use crate::tiling::{extract_patch, ImageSink, PatchGrid, RowSink};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CppdConfig {
    /// Number of patch scales `K`.
    pub k_scales: usize,
    /// Scale-1 patch dims `(a, b)`.
    pub patch_a: usize,
    pub patch_b: usize,
    /// Scale-1 strides `(d_a, d_b)`.
    pub stride_a: usize,
    pub stride_b: usize,
    /// Reverse steps `T` at inference.
    pub t_infer: usize,
    pub seed: u64,
    /// Patches per batch for scale `k` (1-based) at index `k - 1`. Scales past
    /// the end use the first entry divided by `k²`.
    pub batch_patches: Vec<usize>,
}

impl Default for CppdConfig {
    fn default() -> Self {
        Self {
            k_scales: 2,
            patch_a: 128,
            patch_b: 128,
            stride_a: 64,
            stride_b: 64,
            t_infer: 1,
            seed: 0,
            batch_patches: vec![64, 16],
        }
    }
}

impl CppdConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("K", self.k_scales),
            ("a", self.patch_a),
            ("b", self.patch_b),
            ("da", self.stride_a),
            ("db", self.stride_b),
            ("T", self.t_infer),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be at least 1")));
        }
        if self.stride_a > self.patch_a || self.stride_b > self.patch_b {
            return Err(Error::invalid("denoising strides must not exceed the patch dims"));
        }
        if self.batch_patches.is_empty() || self.batch_patches.contains(&0) {
            return Err(Error::invalid("batch sizes must be non-empty and positive"));
        }
        Ok(())
    }

    /// Batch size used at patch scale `k`.
    pub fn batch_for(&self, k: usize) -> usize {
        match self.batch_patches.get(k.saturating_sub(1)) {
            Some(&b) => b,
            None => (self.batch_patches[0] / (k * k)).max(1),
        }
    }

    /// Patch grids for scales `1..=K` over an `h × w` image.
    pub fn grids(&self, h: usize, w: usize) -> Result<Vec<PatchGrid>> {
        scale_grids(
            h,
            w,
            self.k_scales,
            (self.patch_a, self.patch_b),
            (self.stride_a, self.stride_b),
        )
    }

    /// Reverse-process schedule: the linear training endpoints laid over `T`
    /// steps.
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.t_infer, DEFAULT_BETA_START, DEFAULT_BETA_END)
    }
}

/// Seeded standard-normal image. Each row draws from its own ChaCha stream,
/// so the result does not depend on how rows are scheduled.
pub fn initial_noise(channels: usize, height: usize, width: usize, seed: u64) -> Result<ImageTensor> {
    let mut img = ImageTensor::zeros(channels, height, width)?;
    img.data_mut().par_chunks_mut(width).enumerate().for_each(|(row, dst)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(row as u64);
        for v in dst {
            *v = StandardNormal.sample(&mut rng);
        }
    });
    Ok(img)
}

/// Per-pixel mean of the per-scale results.
pub fn reconstruct_step(per_scale: &[ImageTensor]) -> Result<ImageTensor> {
    let first = per_scale
        .first()
        .ok_or_else(|| Error::invalid("no per-scale results to average"))?;
    if per_scale.iter().any(|m| !m.same_shape(first)) {
        return Err(Error::invalid("per-scale results differ in shape"));
    }
    let n = per_scale.len() as f64;
    let data = (0..first.data().len())
        .map(|i| (per_scale.iter().map(|m| m.data()[i] as f64).sum::<f64>() / n) as f32)
        .collect();
    ImageTensor::new(first.channels(), first.height(), first.width(), data)
}

/// Adds merged rows into a running sum.
struct AddSink<'a> {
    dst: &'a mut ImageTensor,
}

impl RowSink for AddSink<'_> {
    fn write_row(&mut self, channel: usize, y: usize, values: &[f64]) {
        let (h, w) = self.dst.dims();
        let row = &mut self.dst.data_mut()[(channel * h + y) * w..][..w];
        for (d, &v) in row.iter_mut().zip(values) {
            *d += v as f32;
        }
    }
}

/// Denoising engine: a denoiser plus everything needed to run reverse steps.
pub struct Cppd<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub config: &'a CppdConfig,
    pub options: &'a InferenceOptions,
}

impl Cppd<'_> {
    fn check_inputs(&self, z_t: &ImageTensor, x: &ImageTensor, c: &ImageTensor, t: usize) -> Result<()> {
        self.config.validate()?;
        if z_t.channels() != 3 || !z_t.same_shape(x) {
            return Err(Error::invalid("z_t and x must both be 3-channel images of equal size"));
        }
        if c.channels() != 1 || c.dims() != z_t.dims() {
            return Err(Error::invalid("structure map must be 1-channel at the latent's size"));
        }
        if t == 0 || t > self.schedule.steps() {
            return Err(Error::invalid(format!(
                "timestep {t} outside 1..={}",
                self.schedule.steps()
            )));
        }
        Ok(())
    }

    /// Split → denoise → reverse update → merge on one grid; merged rows go to `sink`.
    #[allow(clippy::too_many_arguments)]
    fn scale_pass<S: RowSink>(
        &self,
        z_t: &ImageTensor,
        x: &ImageTensor,
        c: &ImageTensor,
        grid: &PatchGrid,
        k: usize,
        t: usize,
        sink: S,
    ) -> Result<S> {
        let opts = self.options;
        let den = self.denoiser;
        let ab_t = self.schedule.alpha_bar(t)?;
        let ab_prev = self.schedule.alpha_bar(t - 1)?;
        let patch = grid.patch_dims();
        let run = backend_dims(patch, opts.resize_policy, |h, w| den.accepts(h, w))?;
        let total = grid.len();
        let task = |i: usize| {
            let z = opts.metered(extract_patch(z_t, grid, i)?);
            let xp = opts.metered(to_dims(extract_patch(x, grid, i)?, run)?);
            let cp = opts.metered(to_dims(extract_patch(c, grid, i)?, run)?);
            let z_run = (run != patch)
                .then(|| to_dims(z.image.clone(), run).map(|img| opts.metered(img)))
                .transpose()?;
            let input = DenoiseInput {
                z_t: z_run.as_ref().map_or(&z.image, |m| &m.image),
                t,
                x: &xp.image,
                c: &cp.image,
                origin: grid.origins()[i],
            };
            let out = den.denoise(&input).map_err(|e| Error::backend(i, e))?;
            if out.channels() != 3 || out.dims() != run {
                return Err(Error::backend(
                    i,
                    Error::invalid(format!(
                        "denoiser returned {}x{}x{} for a {}x{} patch",
                        out.channels(),
                        out.height(),
                        out.width(),
                        run.0,
                        run.1
                    )),
                ));
            }
            let mut z0 = opts.metered(out);
            drop((xp, cp, z_run));
            if run != patch {
                z0 = opts.metered(to_dims(z0.image, patch)?);
            }
            ddim_update_in_place(&z.image, &mut z0.image, ab_t, ab_prev).map_err(|e| Error::backend(i, e))?;
            Ok(z0)
        };
        patch_pass(grid, 3, self.config.batch_for(k), sink, task, |done| {
            opts.report(Progress::Denoise { t, k, done, total })
        })
    }

    fn denoise_at_scale_inner(
        &self,
        z_t: &ImageTensor,
        x: &ImageTensor,
        c: &ImageTensor,
        k: usize,
        t: usize,
    ) -> Result<ImageTensor> {
        if k == 0 || k > self.config.k_scales {
            return Err(Error::invalid(format!("scale {k} outside 1..={}", self.config.k_scales)));
        }
        let (h, w) = z_t.dims();
        let grid = crate::tiling::plan_grid(
            h,
            w,
            k * self.config.patch_a,
            k * self.config.patch_b,
            k * self.config.stride_a,
            k * self.config.stride_b,
        )?;
        let sink = ImageSink(ImageTensor::zeros(3, h, w)?);
        Ok(self.scale_pass(z_t, x, c, &grid, k, t, sink)?.0)
    }

    /// One reverse step at patch scale `k`, returning the merged `z̄^(k)_{t-1}`.
    pub fn denoise_step_at_scale(
        &self,
        z_t: &ImageTensor,
        x: &ImageTensor,
        c: &ImageTensor,
        k: usize,
        t: usize,
    ) -> Result<ImageTensor> {
        self.check_inputs(z_t, x, c, t)?;
        self.options
            .pool()?
            .install(|| self.denoise_at_scale_inner(z_t, x, c, k, t))
    }

    fn step_inner(&self, z_t: &ImageTensor, x: &ImageTensor, c: &ImageTensor, grids: &[PatchGrid], t: usize) -> Result<ImageTensor> {
        let (h, w) = z_t.dims();
        let mut next = ImageTensor::zeros(3, h, w)?;
        for (k, grid) in (1..).zip(grids) {
            self.scale_pass(z_t, x, c, grid, k, t, AddSink { dst: &mut next })
                .stage(Stage::Denoising)?;
        }
        if grids.len() > 1 {
            let inv = grids.len() as f32;
            next.data_mut().par_iter_mut().for_each(|v| *v /= inv);
        }
        if next.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("latent became non-finite at step {t}")).at(Stage::Reconstruction));
        }
        Ok(next)
    }

    /// Full reverse step from `t` to `t - 1` over all `K` scales.
    pub fn step(&self, z_t: &ImageTensor, x: &ImageTensor, c: &ImageTensor, t: usize) -> Result<ImageTensor> {
        self.check_inputs(z_t, x, c, t)?;
        let (h, w) = z_t.dims();
        let grids = self.config.grids(h, w)?;
        self.options.pool()?.install(|| self.step_inner(z_t, x, c, &grids, t))
    }

    /// Runs `t = T … 1` from `z_T`, returning `z_0`.
    pub fn sample(&self, z_init: ImageTensor, x: &ImageTensor, c: &ImageTensor) -> Result<ImageTensor> {
        let t_max = self.schedule.steps();
        self.check_inputs(&z_init, x, c, t_max)?;
        let (h, w) = z_init.dims();
        let grids = self.config.grids(h, w).stage(Stage::Denoising)?;
        self.options.pool()?.install(|| {
            let mut z = z_init;
            for t in (1..=t_max).rev() {
                z = self.step_inner(&z, x, c, &grids, t)?;
                self.options.dump(&format!("step_t{t}.png"), &z)?;
            }
            Ok(z)
        })
    }
}

/// Inpaints a corrupted 3-channel document.
///
/// Resizes the input to the working resolution, predicts and fuses the
/// structure pyramid, samples from seeded Gaussian noise with `T` reverse
/// steps of multi-scale patch denoising, then resizes back to the input size
/// and clamps to `[0, 1]`.
pub fn inpaint_document(
    x: &ImageTensor,
    predictor: &dyn StructurePredictor,
    denoiser: &dyn Denoiser,
    pyramid: &PyramidConfig,
    cppd: &CppdConfig,
    opts: &InferenceOptions,
) -> Result<ImageTensor> {
    if x.channels() != 3 {
        return Err(Error::invalid("input document must have 3 channels"));
    }
    cppd.validate()?;
    let plan = plan_pyramid(x.height(), x.width(), pyramid).stage(Stage::Pyramid)?;
    let schedule = cppd.schedule()?;
    let engine = Cppd {
        denoiser,
        schedule: &schedule,
        config: cppd,
        options: opts,
    };
    opts.pool()?.install(|| {
        let top = to_working(x, &plan).stage(Stage::Pyramid)?;
        let c = structure_map(&top, &plan, predictor, pyramid, opts).stage(Stage::StructurePrediction)?;
        let (h, w) = plan.working_dims();
        let grids = cppd.grids(h, w).stage(Stage::Denoising)?;
        let mut z = initial_noise(3, h, w, cppd.seed)?;
        for t in (1..=schedule.steps()).rev() {
            z = engine.step_inner(&z, &top, &c, &grids, t)?;
            opts.dump(&format!("step_t{t}.png"), &z).stage(Stage::Output)?;
        }
        drop((c, top));
        if z.dims() == x.dims() {
            z.clamp01();
            Ok(z)
        } else {
            resize_bicubic(&z, x.height(), x.width()).stage(Stage::Output)
        }
    })
}
