//! Dense float images, binary masks, and the resampling used between
//! pyramid scales.
//!
//! Pixels are stored channel-major (`c, y, x`) as `f32`. Images are nominally
//! in `[0, 1]`; noisy diffusion latents share the same container and may leave
//! that range, so only finiteness is enforced.

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(channels, height, width)?;
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at flat index {i}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        check_dims(channels, height, width)?;
        if !value.is_finite() {
            return Err(Error::Numeric("fill value is not finite".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        check_dims(channels, height, width)?;
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    /// Builds an image without the finiteness scan. Callers guarantee the
    /// invariants hold.
    pub(crate) fn from_raw(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)`.
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Size of the pixel buffer in bytes.
    pub fn byte_len(&self) -> usize {
        self.data.len() * std::mem::size_of::<f32>()
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f32 {
        assert_eq!(self.data.len(), other.data.len(), "image size mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub(crate) fn same_shape(&self, other: &ImageTensor) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }
}

fn check_dims(channels: usize, height: usize, width: usize) -> Result<()> {
    if channels != 1 && channels != 3 {
        return Err(Error::invalid(format!(
            "images have 1 or 3 channels, got {channels}"
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!(
            "image dimensions must be positive, got {height}x{width}"
        )));
    }
    Ok(())
}

/// A `{0, 1}` corruption mask; `1` marks a missing pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("mask dimensions must be positive"));
        }
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "mask data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0; height * width])
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Fraction of pixels marked missing.
    pub fn coverage(&self) -> f64 {
        self.count_ones() as f64 / self.data.len() as f64
    }

    /// Nearest-neighbour resize; keeps the mask strictly binary.
    pub fn resize_nearest(&self, out_h: usize, out_w: usize) -> Result<BinaryMask> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::invalid("resize target must be at least 1x1"));
        }
        let src_y: Vec<usize> = (0..out_h)
            .map(|y| (((y as f64 + 0.5) * self.height as f64 / out_h as f64) as usize).min(self.height - 1))
            .collect();
        let src_x: Vec<usize> = (0..out_w)
            .map(|x| (((x as f64 + 0.5) * self.width as f64 / out_w as f64) as usize).min(self.width - 1))
            .collect();
        let mut data = Vec::with_capacity(out_h * out_w);
        for &sy in &src_y {
            let row = &self.data[sy * self.width..(sy + 1) * self.width];
            data.extend(src_x.iter().map(|&sx| row[sx]));
        }
        Ok(BinaryMask {
            height: out_h,
            width: out_w,
            data,
        })
    }
}

/// Blanks the masked pixels: `z0 ⊙ (1 − m)`, broadcast over channels.
pub fn compose_masked(z0: &ImageTensor, mask: &BinaryMask) -> Result<ImageTensor> {
    if z0.dims() != (mask.height, mask.width) {
        return Err(Error::invalid(format!(
            "mask is {}x{} but image is {}x{}",
            mask.height,
            mask.width,
            z0.height(),
            z0.width()
        )));
    }
    let n = mask.data.len();
    let mut out = z0.clone();
    for plane in out.data.chunks_exact_mut(n) {
        for (v, &m) in plane.iter_mut().zip(&mask.data) {
            if m == 1 {
                *v = 0.0;
            }
        }
    }
    Ok(out)
}

/// Catmull-Rom cubic (`a = -0.5`).
pub(crate) fn catmull_rom(d: f64) -> f64 {
    const A: f64 = -0.5;
    let x = d.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

#[derive(Clone, Copy)]
struct Taps {
    index: [usize; 4],
    weight: [f32; 4],
}

/// Source taps for every output coordinate along one axis, using half-pixel
/// centre alignment and clamped edges.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut index = [0usize; 4];
            let mut weight = [0f32; 4];
            for j in 0..4 {
                let pos = base as i64 - 1 + j as i64;
                index[j] = pos.clamp(0, in_len as i64 - 1) as usize;
                weight[j] = catmull_rom(frac - (j as f64 - 1.0)) as f32;
            }
            // Make the f32 weights sum to exactly one so constants survive.
            weight[3] = 1.0 - (weight[0] + weight[1] + weight[2]);
            Taps { index, weight }
        })
        .collect()
}

/// Bicubic resize with output clamped to `[0, 1]`. Same-size requests return a
/// bit-identical copy.
pub fn resize_bicubic(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    resize_impl(img, out_h, out_w, true)
}

/// Bicubic resize without the output clamp, for latents that live outside `[0, 1]`.
pub fn resize_bicubic_unclamped(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    resize_impl(img, out_h, out_w, false)
}

fn resize_impl(img: &ImageTensor, out_h: usize, out_w: usize, clamp: bool) -> Result<ImageTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!(
            "resize target must be at least 1x1, got {out_h}x{out_w}"
        )));
    }
    if img.dims() == (out_h, out_w) {
        return Ok(img.clone());
    }
    let (in_h, in_w) = img.dims();
    let channels = img.channels();
    let htaps = axis_taps(in_w, out_w);
    let vtaps = axis_taps(in_h, out_h);

    let mut tmp = vec![0f32; channels * in_h * out_w];
    tmp.par_chunks_mut(out_w)
        .zip(img.data.par_chunks(in_w))
        .for_each(|(dst, src)| {
            for (d, t) in dst.iter_mut().zip(&htaps) {
                let mut acc = src[t.index[0]] * t.weight[0];
                acc += src[t.index[1]] * t.weight[1];
                acc += src[t.index[2]] * t.weight[2];
                acc += src[t.index[3]] * t.weight[3];
                *d = acc;
            }
        });

    let mut out = vec![0f32; channels * out_h * out_w];
    out.par_chunks_mut(out_w).enumerate().for_each(|(row, dst)| {
        let c = row / out_h;
        let t = &vtaps[row % out_h];
        let plane = &tmp[c * in_h * out_w..(c + 1) * in_h * out_w];
        let rows = t.index.map(|i| &plane[i * out_w..(i + 1) * out_w]);
        for (x, d) in dst.iter_mut().enumerate() {
            let mut acc = rows[0][x] * t.weight[0];
            acc += rows[1][x] * t.weight[1];
            acc += rows[2][x] * t.weight[2];
            acc += rows[3][x] * t.weight[3];
            *d = if clamp { acc.clamp(0.0, 1.0) } else { acc };
        }
    });
    Ok(ImageTensor::from_raw(channels, out_h, out_w, out))
}
