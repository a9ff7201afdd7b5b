//! Image pyramid, patch-based structure prediction per scale, and fusion of
//! the per-scale structure maps.
//!
//! The input is first brought to the working resolution `S·u × S·v`; every
//! lower scale `s` is a bicubic downsample of that working image to
//! `s·u × s·v`. Each scale is tiled, passed through the structure predictor
//! patch by patch, merged, resized to the working resolution and averaged.

use std::borrow::Cow;

use crate::backends::StructurePredictor;
use crate::error::{Error, Result};
use crate::image::{resize_bicubic, resize_bicubic_unclamped, ImageTensor};
use crate::runtime::{backend_dims, patch_pass, to_dims, InferenceOptions, Progress};
use crate::tiling::{extract_patch, plan_grid, ImageSink};

pub const DEFAULT_UPSAMPLE: usize = 4;
pub const DEFAULT_BASE_SIDE: usize = 256;
pub const DEFAULT_MAX_SIDE: usize = 4096;
/// Patches per structure-prediction batch.
pub const DEFAULT_STRUCTURE_BATCH: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PyramidConfig {
    /// Upsampling factor `m`.
    pub m: usize,
    /// Explicit scale count `S`; derived from `m` and the input size when `None`.
    pub scale_count: Option<usize>,
    /// Scale-1 dims `(u, v)`. Equal values mean "derive from the aspect ratio,
    /// mapping the shorter side to this length".
    pub base_u: usize,
    pub base_v: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub stride_y: usize,
    pub stride_x: usize,
    /// Longest allowed working-image side.
    pub max_side: usize,
    pub batch: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            m: DEFAULT_UPSAMPLE,
            scale_count: None,
            base_u: DEFAULT_BASE_SIDE,
            base_v: DEFAULT_BASE_SIDE,
            patch_h: 256,
            patch_w: 256,
            stride_y: 128,
            stride_x: 128,
            max_side: DEFAULT_MAX_SIDE,
            batch: DEFAULT_STRUCTURE_BATCH,
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m", self.m),
            ("u", self.base_u),
            ("v", self.base_v),
            ("h", self.patch_h),
            ("w", self.patch_w),
            ("dh", self.stride_y),
            ("dw", self.stride_x),
            ("max_side", self.max_side),
            ("structure batch", self.batch),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be at least 1")));
        }
        if self.scale_count == Some(0) {
            return Err(Error::invalid("S must be at least 1"));
        }
        if self.stride_y > self.patch_h || self.stride_x > self.patch_w {
            return Err(Error::invalid("structure strides must not exceed the patch dims"));
        }
        Ok(())
    }
}

/// Resolved pyramid geometry for one input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PyramidPlan {
    /// Scale-1 dims `(u', v')`.
    pub base: (usize, usize),
    /// Number of scales `S`.
    pub scales: usize,
    /// Original scale factor `s̄` of the input relative to the base dims.
    pub s_bar: f64,
}

impl PyramidPlan {
    /// Dims of scale `s` (1-based).
    pub fn scale_dims(&self, s: usize) -> (usize, usize) {
        (s * self.base.0, s * self.base.1)
    }

    /// Dims of the top scale, the resolution the denoiser works at.
    pub fn working_dims(&self) -> (usize, usize) {
        self.scale_dims(self.scales)
    }
}

fn base_dims(h: usize, w: usize, cfg: &PyramidConfig) -> (usize, usize) {
    if cfg.base_u != cfg.base_v {
        return (cfg.base_u, cfg.base_v);
    }
    let side = cfg.base_u;
    let scaled = |long: usize, short: usize| ((side as f64 * long as f64 / short as f64).round() as usize).max(1);
    if h <= w {
        (side, scaled(w, h))
    } else {
        (scaled(h, w), side)
    }
}

/// Resolves base dims and the scale count for an `h × w` input.
pub fn plan_pyramid(h: usize, w: usize, cfg: &PyramidConfig) -> Result<PyramidPlan> {
    cfg.validate()?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("input image is empty"));
    }
    let (u, v) = base_dims(h, w, cfg);
    let long = u.max(v);
    if long > cfg.max_side {
        return Err(Error::invalid(format!(
            "base dims {u}x{v} already exceed the {} pixel resolution cap",
            cfg.max_side
        )));
    }
    let short_in = h.min(w);
    let short_base = u.min(v);
    let s_bar = short_in as f64 / short_base as f64;
    let wanted = cfg.scale_count.unwrap_or_else(|| (cfg.m * short_in / short_base).max(1));
    let scales = wanted.min(cfg.max_side / long);
    Ok(PyramidPlan {
        base: (u, v),
        scales,
        s_bar,
    })
}

/// Brings `x` to the working resolution, borrowing it when no resize is needed.
pub(crate) fn to_working<'a>(x: &'a ImageTensor, plan: &PyramidPlan) -> Result<Cow<'a, ImageTensor>> {
    let (h, w) = plan.working_dims();
    if x.dims() == (h, w) {
        Ok(Cow::Borrowed(x))
    } else {
        Ok(Cow::Owned(resize_bicubic(x, h, w)?))
    }
}

fn scale_image<'a>(top: &'a ImageTensor, plan: &PyramidPlan, s: usize) -> Result<Cow<'a, ImageTensor>> {
    if s == plan.scales {
        Ok(Cow::Borrowed(top))
    } else {
        let (h, w) = plan.scale_dims(s);
        Ok(Cow::Owned(resize_bicubic(top, h, w)?))
    }
}

/// Builds `[x^1, …, x^S]`. The top level is the input resized to the working
/// resolution; the others are downsampled from it.
pub fn build_image_pyramid(x: &ImageTensor, cfg: &PyramidConfig) -> Result<Vec<ImageTensor>> {
    if x.channels() != 3 {
        return Err(Error::invalid("pyramid input must have 3 channels"));
    }
    let plan = plan_pyramid(x.height(), x.width(), cfg)?;
    let top = to_working(x, &plan)?;
    (1..=plan.scales)
        .map(|s| scale_image(&top, &plan, s).map(Cow::into_owned))
        .collect()
}

fn pspp_inner(
    x_s: &ImageTensor,
    predictor: &dyn StructurePredictor,
    cfg: &PyramidConfig,
    opts: &InferenceOptions,
    scale: usize,
) -> Result<ImageTensor> {
    let (h, w) = x_s.dims();
    let grid = plan_grid(h, w, cfg.patch_h, cfg.patch_w, cfg.stride_y, cfg.stride_x)?;
    let patch = grid.patch_dims();
    let run = backend_dims(patch, opts.resize_policy, |a, b| predictor.accepts(a, b))?;
    let total = grid.len();
    let sink = ImageSink(ImageTensor::zeros(1, h, w)?);
    let task = |i: usize| {
        let input = opts.metered(to_dims(extract_patch(x_s, &grid, i)?, run)?);
        let out = predictor.predict(&input.image).map_err(|e| Error::backend(i, e))?;
        if out.channels() != 1 || out.dims() != run {
            return Err(Error::backend(
                i,
                Error::invalid(format!(
                    "structure predictor returned {}x{}x{} for a {}x{} patch",
                    out.channels(),
                    out.height(),
                    out.width(),
                    run.0,
                    run.1
                )),
            ));
        }
        let out = opts.metered(to_dims(out, patch)?);
        drop(input);
        Ok(out)
    };
    let merged = patch_pass(&grid, 1, cfg.batch, sink, task, |done| {
        opts.report(Progress::Structure { scale, done, total })
    })?;
    let mut map = merged.0;
    map.clamp01();
    Ok(map)
}

/// Patch-based structure prediction on one pyramid level.
pub fn pspp(
    x_s: &ImageTensor,
    predictor: &dyn StructurePredictor,
    cfg: &PyramidConfig,
    opts: &InferenceOptions,
) -> Result<ImageTensor> {
    if x_s.channels() != 3 {
        return Err(Error::invalid("structure prediction needs a 3-channel image"));
    }
    cfg.validate()?;
    opts.pool()?.install(|| pspp_inner(x_s, predictor, cfg, opts, 1))
}

/// Running mean of structure maps resized to a common target size.
pub(crate) struct FusionAccumulator {
    height: usize,
    width: usize,
    sum: Vec<f64>,
    count: usize,
}

impl FusionAccumulator {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            sum: vec![0.0; height * width],
            count: 0,
        }
    }

    pub fn add(&mut self, map: &ImageTensor) -> Result<()> {
        if map.channels() != 1 {
            return Err(Error::invalid("structure maps must have 1 channel"));
        }
        let resized = if map.dims() == (self.height, self.width) {
            Cow::Borrowed(map)
        } else {
            Cow::Owned(resize_bicubic_unclamped(map, self.height, self.width)?)
        };
        for (s, &v) in self.sum.iter_mut().zip(resized.data()) {
            *s += v as f64;
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish_unclamped(self) -> Result<ImageTensor> {
        if self.count == 0 {
            return Err(Error::invalid("no structure maps to fuse"));
        }
        let n = self.count as f64;
        let data = self.sum.into_iter().map(|s| (s / n) as f32).collect();
        ImageTensor::new(1, self.height, self.width, data)
    }

    pub fn finish(self) -> Result<ImageTensor> {
        let mut out = self.finish_unclamped()?;
        out.clamp01();
        Ok(out)
    }
}

/// Mean of the maps resized to `target`, clamped to `[0, 1]`.
pub fn fuse_pyramid(maps: &[ImageTensor], target: (usize, usize)) -> Result<ImageTensor> {
    if maps.is_empty() {
        return Err(Error::invalid("no structure maps to fuse"));
    }
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::invalid("fusion target must be at least 1x1"));
    }
    let mut acc = FusionAccumulator::new(target.0, target.1);
    for m in maps {
        acc.add(m)?;
    }
    acc.finish()
}

/// Structure map of the working image `top`, streaming one scale at a time.
pub(crate) fn structure_map(
    top: &ImageTensor,
    plan: &PyramidPlan,
    predictor: &dyn StructurePredictor,
    cfg: &PyramidConfig,
    opts: &InferenceOptions,
) -> Result<ImageTensor> {
    let (h, w) = plan.working_dims();
    let mut acc = FusionAccumulator::new(h, w);
    for s in 1..=plan.scales {
        let x_s = scale_image(top, plan, s)?;
        let c_s = pspp_inner(&x_s, predictor, cfg, opts, s)?;
        drop(x_s);
        opts.dump(&format!("structure_s{s}.png"), &c_s)?;
        acc.add(&c_s)?;
    }
    let fused = acc.finish()?;
    opts.dump("structure_fused.png", &fused)?;
    Ok(fused)
}

/// Runs the whole structure phase on an input document and returns the fused
/// map at the working resolution together with the resolved plan.
pub fn predict_structure(
    x: &ImageTensor,
    predictor: &dyn StructurePredictor,
    cfg: &PyramidConfig,
    opts: &InferenceOptions,
) -> Result<(ImageTensor, PyramidPlan)> {
    if x.channels() != 3 {
        return Err(Error::invalid("structure prediction needs a 3-channel image"));
    }
    let plan = plan_pyramid(x.height(), x.width(), cfg)?;
    let pool = opts.pool()?;
    let map = pool.install(|| -> Result<ImageTensor> {
        let top = to_working(x, &plan)?;
        structure_map(&top, &plan, predictor, cfg, opts)
    })?;
    Ok((map, plan))
}
