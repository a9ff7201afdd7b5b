//! Accounting for patch-sized pixel buffers.
//!
//! The engine registers every patch buffer it allocates (extracted inputs,
//! backend outputs, resized copies) with an optional [`BufferMeter`]. The meter
//! records live bytes and the high-water mark, which is how the memory bound of
//! the tiled pipeline is checked. Whole-document working images are not
//! patch buffers and are never registered.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::image::ImageTensor;

/// Number of `f32` planes one in-flight patch slot can hold during a
/// denoising step: `z_t` (3) + `x` (3) + structure map (1) + prediction (3).
pub const PLANES_PER_PATCH_SLOT: usize = 10;

/// Upper bound on live patch-buffer bytes for a batch of `batch` patches of
/// `patch_h × patch_w` pixels.
pub fn patch_buffer_cap(batch: usize, patch_h: usize, patch_w: usize) -> usize {
    batch * patch_h * patch_w * PLANES_PER_PATCH_SLOT * std::mem::size_of::<f32>()
}

#[derive(Debug, Default)]
pub struct BufferMeter {
    current: AtomicUsize,
    peak: AtomicUsize,
    allocations: AtomicUsize,
}

impl BufferMeter {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn acquire(self: &Arc<Self>, bytes: usize) -> MeterGuard {
        let now = self.current.fetch_add(bytes, Ordering::SeqCst) + bytes;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.allocations.fetch_add(1, Ordering::Relaxed);
        MeterGuard {
            meter: Arc::clone(self),
            bytes,
        }
    }

    /// Live bytes right now.
    pub fn current(&self) -> usize {
        self.current.load(Ordering::SeqCst)
    }

    /// High-water mark since creation or the last [`reset_peak`](Self::reset_peak).
    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    /// Number of buffers registered so far.
    pub fn allocations(&self) -> usize {
        self.allocations.load(Ordering::Relaxed)
    }

    pub fn reset_peak(&self) {
        self.peak.store(self.current(), Ordering::SeqCst);
    }
}

#[derive(Debug)]
pub struct MeterGuard {
    meter: Arc<BufferMeter>,
    bytes: usize,
}

impl Drop for MeterGuard {
    fn drop(&mut self) {
        self.meter.current.fetch_sub(self.bytes, Ordering::SeqCst);
    }
}

/// A patch image whose bytes are charged to a meter for as long as it lives.
pub(crate) struct Metered {
    pub image: ImageTensor,
    _guard: Option<MeterGuard>,
}

impl Metered {
    pub fn new(image: ImageTensor, meter: Option<&Arc<BufferMeter>>) -> Self {
        let _guard = meter.map(|m| m.acquire(image.byte_len()));
        Self { image, _guard }
    }
}
