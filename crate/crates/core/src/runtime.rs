//! Execution options shared by the structure and denoising phases, and the
//! batched split → backend → merge pass both of them run.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{resize_bicubic_unclamped, ImageTensor};
use crate::meter::{BufferMeter, Metered};
use crate::tiling::{PatchGrid, PatchMerger, RowSink};

/// What to do when a backend does not accept a patch size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ResizePolicy {
    /// Resize patches to the nearest accepted size and the output back.
    #[default]
    Resize,
    /// Fail with an invalid-argument error.
    Reject,
}

/// Progress notification, sent after every merged batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Progress {
    Structure { scale: usize, done: usize, total: usize },
    Denoise { t: usize, k: usize, done: usize, total: usize },
}

pub type ProgressFn = Arc<dyn Fn(Progress) + Send + Sync>;

#[derive(Clone)]
pub struct InferenceOptions {
    /// Worker threads for patch-parallel work; `0` means one per core.
    pub workers: usize,
    pub resize_policy: ResizePolicy,
    pub meter: Option<Arc<BufferMeter>>,
    pub progress: Option<ProgressFn>,
    /// Directory for intermediate PNG dumps.
    pub debug_dir: Option<PathBuf>,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            resize_policy: ResizePolicy::Resize,
            meter: None,
            progress: None,
            debug_dir: None,
        }
    }
}

impl fmt::Debug for InferenceOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InferenceOptions")
            .field("workers", &self.workers)
            .field("resize_policy", &self.resize_policy)
            .field("meter", &self.meter.is_some())
            .field("progress", &self.progress.is_some())
            .field("debug_dir", &self.debug_dir)
            .finish()
    }
}

impl InferenceOptions {
    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
    }

    pub(crate) fn report(&self, p: Progress) {
        if let Some(cb) = &self.progress {
            cb(p);
        }
    }

    pub(crate) fn metered(&self, image: ImageTensor) -> Metered {
        Metered::new(image, self.meter.as_ref())
    }

    pub(crate) fn dump(&self, name: &str, img: &ImageTensor) -> Result<()> {
        match &self.debug_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|source| Error::Io {
                    path: dir.clone(),
                    source,
                })?;
                crate::io::save_image(img, dir.join(name))
            }
            None => Ok(()),
        }
    }
}

/// Nearest size accepted by `accepts`, searching outward in L1 distance and
/// preferring larger sizes on ties.
pub(crate) fn nearest_accepted(h: usize, w: usize, accepts: impl Fn(usize, usize) -> bool) -> Option<(usize, usize)> {
    const RADIUS: usize = 256;
    for d in 0..=RADIUS {
        for dy in (0..=d).rev() {
            let dx = d - dy;
            let hs = [h + dy, h.wrapping_sub(dy)];
            let ws = [w + dx, w.wrapping_sub(dx)];
            for &ch in &hs {
                for &cw in &ws {
                    if (1..=h + RADIUS).contains(&ch) && (1..=w + RADIUS).contains(&cw) && accepts(ch, cw) {
                        return Some((ch, cw));
                    }
                }
            }
        }
    }
    None
}

/// Size a backend will actually run at for `patch` dims under `policy`.
pub(crate) fn backend_dims(
    patch: (usize, usize),
    policy: ResizePolicy,
    accepts: impl Fn(usize, usize) -> bool,
) -> Result<(usize, usize)> {
    if accepts(patch.0, patch.1) {
        return Ok(patch);
    }
    match policy {
        ResizePolicy::Reject => Err(Error::invalid(format!(
            "backend does not accept {}x{} patches",
            patch.0, patch.1
        ))),
        ResizePolicy::Resize => nearest_accepted(patch.0, patch.1, accepts).ok_or_else(|| {
            Error::invalid(format!("no accepted backend size near {}x{}", patch.0, patch.1))
        }),
    }
}

/// Resizes a patch (unclamped) when the backend runs at different dims.
pub(crate) fn to_dims(img: ImageTensor, dims: (usize, usize)) -> Result<ImageTensor> {
    if img.dims() == dims {
        Ok(img)
    } else {
        resize_bicubic_unclamped(&img, dims.0, dims.1)
    }
}

/// Runs `task` for every patch of `grid` in batches of `batch`, in parallel
/// on the current pool, and merges the results in origin order into `sink`.
///
/// At most `batch` task results are alive at once, so patch memory is bounded
/// by the batch size and not by the image size.
pub(crate) fn patch_pass<S, F>(
    grid: &PatchGrid,
    channels: usize,
    batch: usize,
    sink: S,
    task: F,
    mut after_batch: impl FnMut(usize),
) -> Result<S>
where
    S: RowSink,
    F: Fn(usize) -> Result<Metered> + Sync,
{
    let batch = batch.max(1);
    let mut merger = PatchMerger::new(grid, channels, sink);
    let mut start = 0;
    while start < grid.len() {
        let end = (start + batch).min(grid.len());
        let results = (start..end)
            .into_par_iter()
            .map(&task)
            .collect::<Result<Vec<_>>>()?;
        for r in &results {
            merger.push(&r.image)?;
        }
        drop(results);
        after_batch(end);
        start = end;
    }
    merger.finish()
}
